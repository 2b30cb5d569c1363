import numpy as np
import pytest

from shamisa.dataio import generate_fixture_images


@pytest.fixture(scope="session")
def tiny_corpus():
    """Eight 64x64 pristine images, enough for a couple of batches."""
    return generate_fixture_images(8, 64, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(2026)
