"""Frozen-encoder evaluation protocol.

Features are extracted per image as five deterministic crops (four
corners and center, positioned on the half-scale image) encoded at both
full and half scale and concatenated. A closed-form ridge probe maps
features to opinion scores; its regularization is chosen on validation
rank correlation. Reported statistics are Spearman rank correlation
(mid-ranks) and Pearson correlation after a four-parameter logistic
remapping. Includes split generation, zero-shot cross-dataset transfer,
maximum-differentiation pair selection, and a full-reference variant
built on absolute feature differences.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

ALPHA_GRID = np.logspace(-3.0, 3.0, 100)


# ---------------------------------------------------------------- metrics


def _pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length vectors")
    if a.size < 2:
        raise ValueError("need at least two points")
    ac = a - a.mean()
    bc = b - b.mean()
    na = np.sqrt(np.sum(ac * ac))
    nb = np.sqrt(np.sum(bc * bc))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero variance: correlation undefined")
    return float(np.dot(ac, bc) / (na * nb))


def srcc(x, y):
    """Spearman rank correlation: Pearson of mid-ranks (ties averaged)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("need two equal-length vectors")
    if x.size < 2:
        raise ValueError("need at least two points")
    return _pearson(rankdata(x), rankdata(y))


def _logistic(beta, s):
    b1, b2, b3, b4 = beta
    scale = max(abs(b4), 1e-12)
    t = np.clip(-(s - b3) / scale, -500.0, 500.0)
    return (b1 - b2) / (1.0 + np.exp(t)) + b2


@dataclass
class PlccFit:
    plcc: float
    beta: tuple  # (b1, b2, b3, b4) or None when the fit fell back
    converged: bool

    def __float__(self):
        return self.plcc


def plcc_4pl(predictions, scores, maxiter=20000):
    """Pearson correlation after a four-parameter logistic remapping.

    Fits q(s) = (b1-b2) / (1 + exp(-(s-b3)/|b4|)) + b2 by derivative-free
    simplex least squares, initialized at b1=max(y), b2=min(y),
    b3=median(s), b4=std(s). A non-convergent fit falls back to the raw
    Pearson correlation, flagged via `converged=False`.
    """
    s = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("need two equal-length vectors")
    if s.size < 5:
        raise ValueError("need at least five points to fit four parameters")
    if np.all(s == s[0]):
        raise ValueError("zero variance: correlation undefined")

    def sse(beta):
        r = _logistic(beta, s) - y
        return float(np.dot(r, r))

    init = np.array([y.max(), y.min(), np.median(s), max(s.std(), 1e-6)])
    res = minimize(
        sse,
        init,
        method="Nelder-Mead",
        options={
            "maxiter": maxiter,
            "maxfev": maxiter,
            "xatol": 1e-12,
            "fatol": 1e-12,
        },
    )
    if not res.success:
        return PlccFit(_pearson(s, y), None, False)
    beta = res.x
    mapped = _logistic(beta, s)
    if np.std(mapped) == 0.0:
        return PlccFit(_pearson(s, y), None, False)
    return PlccFit(_pearson(mapped, y), tuple(float(b) for b in beta), True)


# ------------------------------------------------------- feature extraction


def crop_offsets(h, w, c):
    """Five deterministic crop corners: TL, TR, BL, BR, then center."""
    if h < c or w < c:
        raise ValueError(f"cannot place a {c}-pixel crop on a {h}x{w} image")
    return (
        (0, 0),
        (0, w - c),
        (h - c, 0),
        (h - c, w - c),
        ((h - c) // 2, (w - c) // 2),
    )


def half_scale(image):
    """2x2 box-filter downsampling (odd trailing row/column dropped)."""
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    h2, w2 = h // 2, w // 2
    x = image[:, : h2 * 2, : w2 * 2]
    return x.reshape(image.shape[0], h2, 2, w2, 2).mean(axis=(2, 4))


def _image_crops(image, c):
    """Ten aligned crop-size views: five full-scale, five half-scale.

    Crop positions live on the half-scale image; the full-scale view of
    each crop starts at the doubled offset, so both scales look at the
    same corner of the picture.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("expected a (3, H, W) image")
    half = half_scale(image)
    _, h2, w2 = half.shape
    if h2 < c or w2 < c:
        raise ValueError(
            f"image too small: need at least {2 * c}x{2 * c} pixels, "
            f"got {image.shape[1]}x{image.shape[2]}"
        )
    offs = crop_offsets(h2, w2, c)
    full = [image[:, 2 * r : 2 * r + c, 2 * q : 2 * q + c] for r, q in offs]
    halves = [half[:, r : r + c, q : q + c] for r, q in offs]
    return np.stack(full + halves)


def extract_features(encoder, image):
    """(5, 2*d_h) block: per crop, full-scale and half-scale features."""
    return extract_feature_set(encoder, [image])[0]


def extract_feature_set(encoder, images, chunk=500):
    """Feature blocks for many images: (n, 5, 2*d_h)."""
    c = encoder.cfg.input_size
    crops = [_image_crops(im, c) for im in images]
    flat = np.concatenate(crops) if crops else np.zeros((0, 3, c, c))
    feats = np.zeros((flat.shape[0], encoder.d_h))
    for lo in range(0, flat.shape[0], chunk):
        feats[lo : lo + chunk] = encoder.encode(flat[lo : lo + chunk])
    feats = feats.reshape(len(images), 10, encoder.d_h)
    return np.concatenate([feats[:, :5], feats[:, 5:]], axis=2)


def fr_features(ref_block, dist_block):
    """Full-reference features: elementwise |reference - distorted|."""
    a = np.asarray(ref_block, dtype=np.float64)
    b = np.asarray(dist_block, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("reference/distorted feature shapes disagree")
    return np.abs(a - b)


# ------------------------------------------------------------- ridge probe


@dataclass
class ProbeModel:
    w: np.ndarray
    bias: float
    alpha: float
    beta: tuple = None  # optional 4PL parameters

    @property
    def width(self):
        return int(self.w.size)


def predict(probe, block):
    """Mean of the five per-crop linear predictions.

    Accepts one (5, width) block or a stack (n, 5, width).
    """
    block = np.asarray(block, dtype=np.float64)
    if block.shape[-1] != probe.width:
        raise ValueError(
            f"feature width {block.shape[-1]} does not match probe width "
            f"{probe.width}"
        )
    return (block @ probe.w).mean(axis=-1) + probe.bias


def _ridge_solver(x, y):
    """Closed-form centered ridge, factored once for a whole alpha grid."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm = x.mean(axis=0)
    ym = float(y.mean())
    xc = x - xm
    lam, vecs = np.linalg.eigh(xc.T @ xc)
    lam = np.maximum(lam, 0.0)
    proj = vecs.T @ (xc.T @ (y - ym))

    def solve(alpha):
        w = vecs @ (proj / (lam + alpha))
        return w, ym - float(xm @ w)

    return solve


def crop_average(features):
    """Collapse (n, 5, width) blocks to their crop-mean vectors."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError("expected (n, crops, width) feature blocks")
    return features.mean(axis=1)


def _val_score(solve, alpha, val_x, val_y):
    w, b = solve(alpha)
    try:
        return srcc(val_x @ w + b, val_y)
    except ValueError:
        return -np.inf


def ridge_fit(train_x, train_y, val_x, val_y, grid=ALPHA_GRID):
    """Probe fit with alpha chosen by validation rank correlation.

    Inputs are crop-averaged feature vectors. Ties (and degenerate
    validation scores) resolve to the smallest alpha on the grid.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    if val_x.shape[0] == 0:
        raise ValueError("validation set is empty")
    solve = _ridge_solver(train_x, train_y)
    scores = np.array([_val_score(solve, a, val_x, np.asarray(val_y)) for a in grid])
    best = int(np.argmax(scores)) if np.any(np.isfinite(scores)) else 0
    w, b = solve(grid[best])
    return ProbeModel(w, b, float(grid[best]))


def select_alpha(fbar, scores, splits, grid=ALPHA_GRID):
    """Alpha maximizing the median validation SRCC across splits."""
    solvers = []
    for tr, va, _ in splits:
        solvers.append((_ridge_solver(fbar[tr], scores[tr]), va))
    medians = np.empty(len(grid))
    for gi, alpha in enumerate(grid):
        vals = [
            _val_score(solve, alpha, fbar[va], scores[va]) for solve, va in solvers
        ]
        medians[gi] = np.median(vals)
    if not np.any(np.isfinite(medians)):
        return float(grid[0])
    return float(grid[int(np.argmax(medians))])


@dataclass
class SplitResult:
    split: int
    srcc: float
    plcc: float
    alpha: float
    plcc_converged: bool


@dataclass
class ProbeReport:
    alpha: float
    splits: list
    median_srcc: float
    median_plcc: float


def probe_eval(features, scores, splits, grid=ALPHA_GRID):
    """Full probe protocol on (n, 5, width) features and their scores.

    One alpha is selected for the whole dataset (median validation SRCC
    across splits), then each split is refit at that alpha and scored on
    its test portion; medians over splits are the headline numbers.
    """
    scores = np.asarray(scores, dtype=np.float64)
    fbar = crop_average(features)
    alpha = select_alpha(fbar, scores, splits, grid)
    results = []
    for si, (tr, _, te) in enumerate(splits):
        solve = _ridge_solver(fbar[tr], scores[tr])
        w, b = solve(alpha)
        preds = fbar[te] @ w + b
        rho = srcc(preds, scores[te])
        fit = plcc_4pl(preds, scores[te])
        results.append(SplitResult(si, rho, fit.plcc, alpha, fit.converged))
    return ProbeReport(
        alpha,
        results,
        float(np.median([r.srcc for r in results])),
        float(np.median([r.plcc for r in results])),
    )


# ------------------------------------------------------------------ splits


def make_splits(
    manifest, mode="reference_disjoint", ratios=(0.7, 0.1, 0.2), n_splits=10, seed=0
):
    """Seeded train/val/test index triples.

    reference_disjoint partitions reference ids and keeps every derived
    image with its reference; random partitions images directly.
    """
    from .rng import substream

    if abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive and sum to 1")
    if n_splits < 1:
        raise ValueError("need at least one split")
    n = len(manifest.paths)
    splits = []
    if mode == "random":
        for s in range(n_splits):
            perm = substream(seed, "splits", s).permutation(n)
            splits.append(_cut(perm, ratios))
    elif mode == "reference_disjoint":
        if manifest.ref_ids is None:
            raise ValueError("reference-disjoint splits need reference ids")
        refs = sorted(set(manifest.ref_ids))
        by_ref = {r: [] for r in refs}
        for idx, r in enumerate(manifest.ref_ids):
            by_ref[r].append(idx)
        for s in range(n_splits):
            perm = substream(seed, "splits", s).permutation(len(refs))
            rtr, rva, rte = _cut(perm, ratios)
            splits.append(
                tuple(
                    np.sort(
                        np.concatenate([by_ref[refs[i]] for i in part]).astype(np.int64)
                    )
                    for part in (rtr, rva, rte)
                )
            )
    else:
        raise ValueError(f"unknown split mode: {mode!r}")
    return splits


def _cut(perm, ratios):
    n = perm.size
    n_tr = int(round(ratios[0] * n))
    n_va = int(round(ratios[1] * n))
    n_te = n - n_tr - n_va
    if min(n_tr, n_va, n_te) < 1:
        raise ValueError(f"pool of {n} too small for ratios {ratios}")
    return (
        np.sort(perm[:n_tr]).astype(np.int64),
        np.sort(perm[n_tr : n_tr + n_va]).astype(np.int64),
        np.sort(perm[n_tr + n_va :]).astype(np.int64),
    )


# ------------------------------------------------------- transfer and gMAD


@dataclass
class CrossReport:
    alpha: float
    per_split: list  # (split index, srcc) pairs
    median_srcc: float
    probes: list  # fitted ProbeModel per source split


def cross_eval(
    features_src,
    scores_src,
    splits_src,
    features_tgt,
    scores_tgt,
    splits_tgt,
    grid=ALPHA_GRID,
):
    """Zero-shot transfer: fit and select on source, score target tests.

    Nothing on the target side is fitted: alpha comes from source
    validation splits and each probe sees only source training data.
    """
    scores_src = np.asarray(scores_src, dtype=np.float64)
    scores_tgt = np.asarray(scores_tgt, dtype=np.float64)
    if len(splits_src) != len(splits_tgt):
        raise ValueError("source and target split counts differ")
    fbar_s = crop_average(features_src)
    fbar_t = crop_average(features_tgt)
    alpha = select_alpha(fbar_s, scores_src, splits_src, grid)
    per_split, probes = [], []
    for si, (tr, _, _) in enumerate(splits_src):
        solve = _ridge_solver(fbar_s[tr], scores_src[tr])
        w, b = solve(alpha)
        probes.append(ProbeModel(w, b, alpha))
        te = splits_tgt[si][2]
        per_split.append((si, srcc(fbar_t[te] @ w + b, scores_tgt[te])))
    return CrossReport(
        alpha, per_split, float(np.median([r for _, r in per_split])), probes
    )


@dataclass
class GmadPair:
    bin: int
    i: int
    j: int
    gap: float
    members: np.ndarray


def gmad_select(defender, attacker, n_bins=10, bins=None):
    """Maximum-differentiation pairs from defender-equal-quality bins.

    Images are split into `n_bins` equal-count bins by defender score
    (ties keep index order); within each requested bin the pair with
    the largest absolute attacker gap is returned, smallest index pair
    on ties. Defaults to the lowest and highest bins.
    """
    defender = np.asarray(defender, dtype=np.float64)
    attacker = np.asarray(attacker, dtype=np.float64)
    if defender.shape != attacker.shape or defender.ndim != 1:
        raise ValueError("need two equal-length score vectors")
    if defender.size < 2 * n_bins:
        raise ValueError(f"need at least {2 * n_bins} images for {n_bins} bins")
    order = np.argsort(defender, kind="stable")
    parts = np.array_split(order, n_bins)
    requested = (0, n_bins - 1) if bins is None else tuple(bins)
    out = []
    for b in requested:
        members = np.sort(parts[b])
        if members.size < 2:
            raise ValueError(f"bin {b} has fewer than two images")
        best = None
        for ii in range(members.size):
            for jj in range(ii + 1, members.size):
                gap = abs(attacker[members[ii]] - attacker[members[jj]])
                if best is None or gap > best[2]:
                    best = (int(members[ii]), int(members[jj]), float(gap))
        out.append(GmadPair(int(b), best[0], best[1], best[2], members))
    return out
