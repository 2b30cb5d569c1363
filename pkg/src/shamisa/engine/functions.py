"""Atomic distortion inventory.

Images are float64 arrays shaped (3, H, W) with values in [0, 1]. Every
function maps a perceptual severity in [0, 1] to its native parameter
through a five-point monotone anchor table; severity 0 is the identity
up to clamping. One function per category ships by default and the
registry accepts more without touching call sites.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

CATEGORIES = (
    "brightness",
    "blur",
    "spatial",
    "noise",
    "color",
    "compression",
    "sharpness_contrast",
)

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class DistortionFunction:
    fid: str
    category: str
    anchors: tuple  # ((severity, native parameter), ...) five points
    stochastic: bool
    fn: callable

    @property
    def lam_min(self):
        natives = [a[1] for a in self.anchors]
        return min(natives)

    @property
    def lam_max(self):
        natives = [a[1] for a in self.anchors]
        return max(natives)


REGISTRY = {}


def register(fid, category, anchors, stochastic, fn):
    if category not in CATEGORIES:
        raise ValueError(f"unknown category: {category}")
    if fid in REGISTRY:
        raise ValueError(f"duplicate function id: {fid}")
    anchors = tuple((float(s), float(lam)) for s, lam in anchors)
    if len(anchors) != 5:
        raise ValueError("anchor tables carry exactly five points")
    sev = [a[0] for a in anchors]
    if sev[0] != 0.0 or sev[-1] != 1.0 or any(b <= a for a, b in zip(sev, sev[1:])):
        raise ValueError("anchor severities must increase strictly from 0 to 1")
    nat = [a[1] for a in anchors]
    inc = all(b > a for a, b in zip(nat, nat[1:]))
    dec = all(b < a for a, b in zip(nat, nat[1:]))
    if not (inc or dec):
        raise ValueError("anchor native values must be strictly monotone")
    entry = DistortionFunction(fid, category, anchors, stochastic, fn)
    REGISTRY[fid] = entry
    return entry


def functions_in(category):
    return [f for f in REGISTRY.values() if f.category == category]


def calibrate_severity(function, s):
    """Map severity s in [0, 1] to the native parameter (piecewise linear)."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"severity outside [0, 1]: {s}")
    sev = np.array([a[0] for a in function.anchors])
    nat = np.array([a[1] for a in function.anchors])
    return float(np.interp(s, sev, nat))


def severity_from_native(function, lam):
    """Inverse of calibrate_severity over the anchored range."""
    sev = np.array([a[0] for a in function.anchors])
    nat = np.array([a[1] for a in function.anchors])
    lo, hi = min(nat[0], nat[-1]), max(nat[0], nat[-1])
    if not lo <= lam <= hi:
        raise ValueError(f"native parameter outside anchored range: {lam}")
    if nat[0] > nat[-1]:
        sev, nat = sev[::-1], nat[::-1]
    return float(np.interp(lam, nat, sev))


def apply_distortion(function, image, lam, rng=None):
    """Apply at the native parameter and clamp the result to [0, 1]."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {image.shape}")
    if function.stochastic and rng is None and lam != _identity_lam(function):
        raise ValueError(f"{function.fid} is stochastic and needs an rng")
    out = function.fn(image, lam, rng)
    return np.clip(out, 0.0, 1.0)


def _identity_lam(function):
    return function.anchors[0][1]


# ---------------------------------------------------------------------------
# implementations

def _brightness_shift(img, lam, _rng):
    return img + lam


def _gaussian_blur(img, sigma, _rng):
    if sigma <= 0.0:
        return img.copy()
    return ndimage.gaussian_filter(img, sigma=(0.0, sigma, sigma), mode="reflect")


def _segment_starts(size, factor):
    starts = np.unique(np.round(np.arange(0.0, size, factor)).astype(np.int64))
    return starts[starts < size]


def _pixelate(img, factor, _rng):
    if factor <= 1.0:
        return img.copy()
    out = img
    for axis in (1, 2):
        starts = _segment_starts(img.shape[axis], factor)
        counts = np.diff(np.append(starts, img.shape[axis]))
        means = np.add.reduceat(out, starts, axis=axis) / _expand(counts, out.ndim, axis)
        out = np.repeat(means, counts, axis=axis)
    return out


def _expand(v, ndim, axis):
    shape = [1] * ndim
    shape[axis] = len(v)
    return v.reshape(shape)


def _awgn(img, sigma, rng):
    if sigma <= 0.0:
        return img.copy()
    return img + rng.normal(0.0, sigma, size=img.shape)


def _saturate(img, s, _rng):
    luma = np.tensordot(_LUMA, img, axes=(0, 0))
    return luma[None, :, :] + s * (img - luma[None, :, :])


_DCT8 = None


def _dct_matrix():
    global _DCT8
    if _DCT8 is None:
        n = np.arange(8)
        k = n[:, None]
        m = np.cos(np.pi * (n[None, :] + 0.5) * k / 8.0)
        m[0] *= np.sqrt(1.0 / 8.0)
        m[1:] *= np.sqrt(2.0 / 8.0)
        _DCT8 = m
    return _DCT8


def _block_quantize(img, step, _rng):
    """JPEG-style proxy: uniform quantization of 8x8 block DCT coefficients."""
    if step <= 0.0:
        return img.copy()
    d = _dct_matrix()
    _, h, w = img.shape
    ph = (-h) % 8
    pw = (-w) % 8
    x = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")
    nh, nw = x.shape[1] // 8, x.shape[2] // 8
    blocks = x.reshape(3, nh, 8, nw, 8).transpose(0, 1, 3, 2, 4)
    coef = np.einsum("ij,cnmjk,lk->cnmil", d, blocks, d)
    coef = np.round(coef / step) * step
    rec = np.einsum("ji,cnmjk,kl->cnmil", d, coef, d)
    out = rec.transpose(0, 1, 3, 2, 4).reshape(3, nh * 8, nw * 8)
    return out[:, :h, :w]


def _contrast(img, c, _rng):
    return 0.5 + c * (img - 0.5)


register(
    "brightness.shift",
    "brightness",
    ((0.0, 0.0), (0.25, 0.08), (0.5, 0.18), (0.75, 0.32), (1.0, 0.5)),
    False,
    _brightness_shift,
)
register(
    "blur.gaussian",
    "blur",
    ((0.0, 0.0), (0.25, 0.6), (0.5, 1.2), (0.75, 2.2), (1.0, 4.0)),
    False,
    _gaussian_blur,
)
register(
    "spatial.pixelate",
    "spatial",
    ((0.0, 1.0), (0.25, 2.0), (0.5, 4.0), (0.75, 8.0), (1.0, 16.0)),
    False,
    _pixelate,
)
register(
    "noise.awgn",
    "noise",
    ((0.0, 0.0), (0.25, 0.04), (0.5, 0.09), (0.75, 0.16), (1.0, 0.25)),
    True,
    _awgn,
)
register(
    "color.saturate",
    "color",
    ((0.0, 1.0), (0.25, 0.72), (0.5, 0.45), (0.75, 0.2), (1.0, 0.0)),
    False,
    _saturate,
)
register(
    "compression.block_quantize",
    "compression",
    ((0.0, 0.0), (0.25, 0.05), (0.5, 0.13), (0.75, 0.3), (1.0, 0.7)),
    False,
    _block_quantize,
)
register(
    "sharpness_contrast.contrast",
    "sharpness_contrast",
    ((0.0, 1.0), (0.25, 0.78), (0.5, 0.55), (0.75, 0.3), (1.0, 0.1)),
    False,
    _contrast,
)
