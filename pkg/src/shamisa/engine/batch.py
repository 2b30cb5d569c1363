"""Composition sampling and batch assembly.

A batch is built from B tiny-batches of R pristine crops. Each
tiny-batch i carries C composition groups; group (i, k) holds one
sampled composition (category subset, one function per category,
application order, base severities) plus a varying coordinate m* and L
level severities, kept in sampled order. Every reference crop (i, j)
then appears once per (k, l), giving N = B*R*(C*L + 1) rows with all
references first, followed by the distorted sets in (k, l) order.
"""

from dataclasses import dataclass, field

import numpy as np

from ..rng import substream
from . import functions as F


@dataclass(frozen=True)
class EngineConfig:
    B: int = 2
    R: int = 3
    C: int = 4
    L: int = 5
    M_d: int = 7
    crop: int = 64
    severity_sampling: str = "folded_normal"  # or "uniform"
    fixed_order: bool = False
    discrete_levels: int = 0

    def __post_init__(self):
        for name in ("B", "R", "C", "L", "M_d", "crop"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.severity_sampling not in ("folded_normal", "uniform"):
            raise ValueError(
                f"unknown severity sampling: {self.severity_sampling}"
            )
        if self.discrete_levels < 0:
            raise ValueError("discrete_levels must be non-negative")

    @property
    def n_ref(self):
        return self.B * self.R

    @property
    def n_rows(self):
        return self.n_ref * (self.C * self.L + 1)


@dataclass(frozen=True)
class CompositionSpec:
    categories: tuple
    fids: tuple
    order: tuple  # permutation over range(M): application sequence
    base: tuple  # base severity per coordinate
    varying: int  # index m* of the coordinate swept by the levels

    @property
    def m(self):
        return len(self.fids)


@dataclass(frozen=True)
class RowMeta:
    role: str  # "ref" or "dist"
    i: int
    j: int
    k: int  # -1 for references
    l: int  # -1 for references


@dataclass
class BatchMeta:
    config: EngineConfig
    rows: list
    specs: dict  # (i, k) -> CompositionSpec
    levels: dict  # (i, k) -> tuple of L level severities
    base_key: tuple = field(default=())

    @property
    def n_ref(self):
        return self.config.n_ref

    def ref_row(self, i, j):
        return i * self.config.R + j

    def row_of(self, i, j, k, l):
        c = self.config
        return c.n_ref * (1 + k * c.L + l) + i * c.R + j

    def varying_severity(self, row):
        rm = self.rows[row]
        if rm.role != "dist":
            raise ValueError("reference rows carry no varying severity")
        return self.levels[(rm.i, rm.k)][rm.l]

    def applied_severities(self, row):
        rm = self.rows[row]
        spec = self.specs[(rm.i, rm.k)]
        sev = list(spec.base)
        sev[spec.varying] = self.levels[(rm.i, rm.k)][rm.l]
        return sev

    def pseudo_mos(self, row):
        """Fixture quality score: 1 - mean applied severity."""
        return 1.0 - float(np.mean(self.applied_severities(row)))


def sample_severity(rng, config):
    """One severity draw; the folded-normal tail piles up at exactly 1."""
    if config.severity_sampling == "uniform":
        s = float(rng.uniform(0.0, 1.0))
    elif config.severity_sampling == "folded_normal":
        s = min(1.0, abs(float(rng.normal(0.0, 0.5))))
    else:
        raise ValueError(f"unknown severity sampling: {config.severity_sampling}")
    d = config.discrete_levels
    if d > 1:
        s = round(s * (d - 1)) / (d - 1)
    return s


def sample_composition(rng, config, severity_rng=None):
    if not 1 <= config.M_d <= len(F.CATEGORIES):
        raise ValueError(f"M_d must lie in [1, {len(F.CATEGORIES)}]")
    sev_rng = severity_rng if severity_rng is not None else rng
    m = int(rng.integers(1, config.M_d + 1))
    cats = tuple(sorted(rng.choice(len(F.CATEGORIES), size=m, replace=False)))
    categories = tuple(F.CATEGORIES[c] for c in cats)
    fids = []
    for cat in categories:
        pool = F.functions_in(cat)
        if not pool:
            raise ValueError(f"no registered function for category {cat}")
        fids.append(pool[int(rng.integers(len(pool)))].fid)
    if config.fixed_order:
        order = tuple(range(m))
    else:
        order = tuple(int(v) for v in rng.permutation(m))
    base = tuple(sample_severity(sev_rng, config) for _ in range(m))
    varying = int(rng.integers(m))
    return CompositionSpec(categories, tuple(fids), order, base, varying)


def sample_levels(rng, config):
    return tuple(sample_severity(rng, config) for _ in range(config.L))


def apply_composition(image, spec, level, rng=None):
    """Run the composition at one level of the varying coordinate.

    Functions apply in `spec.order`; the result is clamped to [0, 1]
    after every stage. Stochastic stages consume `rng` in that order.
    """
    sev = list(spec.base)
    sev[spec.varying] = level
    out = image
    for idx in spec.order:
        fn = F.REGISTRY[spec.fids[idx]]
        lam = F.calibrate_severity(fn, sev[idx])
        out = F.apply_distortion(fn, out, lam, rng=rng)
    return out


def _crop(image, top, left, size):
    return image[:, top : top + size, left : left + size]


def build_batch(sources, config, base_key):
    """Assemble one training batch plus its metadata.

    `sources` holds B*R full images; one random crop is taken per image.
    Randomness fans out of `base_key` into the "crops", "compositions",
    "severities" and per-row "noise" sub-streams, so any single row is
    reproducible in isolation.
    """
    c = config
    if len(sources) != c.n_ref:
        raise ValueError(f"expected {c.n_ref} reference images, got {len(sources)}")
    crop_rng = substream(*base_key, "crops")
    comp_rng = substream(*base_key, "compositions")
    sev_rng = substream(*base_key, "severities")

    refs = np.empty((c.n_ref, 3, c.crop, c.crop))
    for idx, img in enumerate(sources):
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) images, got {img.shape}")
        h, w = img.shape[1], img.shape[2]
        if h < c.crop or w < c.crop:
            raise ValueError(f"crop {c.crop} larger than source image {h}x{w}")
        top = int(crop_rng.integers(0, h - c.crop + 1))
        left = int(crop_rng.integers(0, w - c.crop + 1))
        refs[idx] = _crop(img, top, left, c.crop)

    specs = {}
    levels = {}
    for i in range(c.B):
        for k in range(c.C):
            specs[(i, k)] = sample_composition(comp_rng, c, severity_rng=sev_rng)
            levels[(i, k)] = sample_levels(sev_rng, c)

    x = np.empty((c.n_rows, 3, c.crop, c.crop))
    rows = []
    x[: c.n_ref] = refs
    for i in range(c.B):
        for j in range(c.R):
            rows.append(RowMeta("ref", i, j, -1, -1))
    pos = c.n_ref
    for k in range(c.C):
        for l in range(c.L):
            for i in range(c.B):
                for j in range(c.R):
                    noise_rng = substream(*base_key, "noise", i, j, k, l)
                    x[pos] = apply_composition(
                        refs[i * c.R + j], specs[(i, k)], levels[(i, k)][l], noise_rng
                    )
                    rows.append(RowMeta("dist", i, j, k, l))
                    pos += 1
    meta = BatchMeta(c, rows, specs, levels, tuple(base_key))
    return x, meta
