"""Named deterministic random streams.

A single master seed fans out into independent sub-streams keyed by a
tuple of strings and integers ("crops", "noise", step, i, j, ...), so any
stream can be replayed in isolation without running the others.
"""

import zlib

import numpy as np


def _key_to_ints(key):
    out = []
    for part in key:
        if isinstance(part, str):
            # crc32 gives a stable 32-bit word per name across runs/platforms
            out.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)):
            out.append(int(part) & 0xFFFFFFFF)
        else:
            raise TypeError(f"stream key parts must be str or int, got {type(part)!r}")
    return out


def substream(*key):
    """Return a Generator for the sub-stream identified by `key`.

    The first component is conventionally the master seed; the rest name
    the stream ("crops", "compositions", "severities", "noise", "init",
    "sampling") plus any indices (step, i, j, k, l).
    """
    if not key:
        raise ValueError("empty stream key")
    return np.random.default_rng(np.random.SeedSequence(_key_to_ints(key)))
