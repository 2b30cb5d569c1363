"""Relation graphs over one batch.

Three graphs come from the batch metadata alone (reference-to-distorted
trajectories, within-group severity gaps, the weak all-pairs reference
mesh) and one from the current representations (row-wise top-k cosine
neighbors). Edge weights live in [0, 1], diagonals are never stored,
and storage is directed: symmetric constructions emit both
orientations. All Top-K selections break ties lexicographically on
(source, target) so rebuilding a batch is reproducible to the bit.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SparseGraph:
    n: int
    src: np.ndarray
    dst: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        w = np.asarray(self.w, dtype=np.float64)
        if not (src.shape == dst.shape == w.shape) or src.ndim != 1:
            raise ValueError("edge arrays must be 1-D and equally long")
        if src.size:
            if src.min() < 0 or src.max() >= self.n or dst.min() < 0 or dst.max() >= self.n:
                raise ValueError("edge endpoint outside [0, n)")
            if (src == dst).any():
                raise ValueError("self edges are not allowed")
            if w.min() < 0.0 or w.max() > 1.0:
                raise ValueError("edge weights must lie in [0, 1]")
        order = np.lexsort((dst, src))
        src, dst, w = src[order], dst[order], w[order]
        keys = src * self.n + dst
        if keys.size and (np.diff(keys) == 0).any():
            raise ValueError("duplicate edge keys")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "w", w)

    @property
    def nnz(self):
        return int(self.src.size)

    @property
    def weight_sum(self):
        return float(self.w.sum())

    def to_dense(self):
        dense = np.zeros((self.n, self.n))
        dense[self.src, self.dst] = self.w
        return dense


def empty_graph(n):
    return SparseGraph(n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))


def severity_weight(u, kappa=2.0, weight_map="exp"):
    """Map a severity (or severity gap) in [0, 1] to an edge weight."""
    u = np.asarray(u, dtype=np.float64)
    if (u < 0.0).any() or (u > 1.0).any():
        raise ValueError("severity weight input outside [0, 1]")
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    if weight_map == "exp":
        return np.exp(-kappa * u)
    if weight_map == "identity":
        return u.copy()
    raise ValueError(f"unknown weight map: {weight_map}")


def build_grd(meta, kappa=2.0, weight_map="exp"):
    """Reference-to-distorted edges weighted by the level severity."""
    c = meta.config
    src, dst, sev = [], [], []
    for i in range(c.B):
        for j in range(c.R):
            ref = meta.ref_row(i, j)
            for k in range(c.C):
                for l in range(c.L):
                    src.append(ref)
                    dst.append(meta.row_of(i, j, k, l))
                    sev.append(meta.levels[(i, k)][l])
    w = severity_weight(np.array(sev), kappa, weight_map)
    return SparseGraph(c.n_rows, np.array(src, np.int64), np.array(dst, np.int64), w)


def build_gdd(meta, kappa=2.0, K_d=4096, weight_map="exp"):
    """Within-group severity-gap edges, truncated to the K_d global largest."""
    c = meta.config
    srcs, dsts, ws = [], [], []
    for i in range(c.B):
        for k in range(c.C):
            rows = np.array(
                [meta.row_of(i, j, k, l) for j in range(c.R) for l in range(c.L)],
                np.int64,
            )
            sev = np.array(
                [meta.levels[(i, k)][l] for _ in range(c.R) for l in range(c.L)]
            )
            m = rows.size
            a = np.repeat(rows, m)
            b = np.tile(rows, m)
            gap = np.abs(np.repeat(sev, m) - np.tile(sev, m))
            keep = a != b
            srcs.append(a[keep])
            dsts.append(b[keep])
            ws.append(severity_weight(gap[keep], kappa, weight_map))
    graph = SparseGraph(
        c.n_rows, np.concatenate(srcs), np.concatenate(dsts), np.concatenate(ws)
    )
    return top_k_global(graph, K_d)


def build_grr(meta, w_rr):
    """All ordered pairs of distinct references at constant weight w_rr."""
    if not 0.0 < w_rr <= 1.0:
        raise ValueError("w_rr must lie in (0, 1]")
    n_ref = meta.n_ref
    a = np.repeat(np.arange(n_ref, dtype=np.int64), n_ref)
    b = np.tile(np.arange(n_ref, dtype=np.int64), n_ref)
    keep = a != b
    w = np.full(keep.sum(), float(w_rr))
    return SparseGraph(meta.config.n_rows, a[keep], b[keep], w)


def build_gknn(h, k_n):
    """Row-wise top-k_n cosine neighbors of the representations."""
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if not 1 <= k_n < n:
        raise ValueError(f"k_n must lie in [1, {n - 1}]")
    norms = np.linalg.norm(h, axis=1)
    if (norms == 0.0).any():
        raise ValueError("zero-norm representation row")
    hn = h / norms[:, None]
    sims = hn @ hn.T
    src = np.empty(n * k_n, np.int64)
    dst = np.empty(n * k_n, np.int64)
    w = np.empty(n * k_n)
    cols = np.arange(n)
    for i in range(n):
        row = sims[i]
        # sort by similarity descending, then by target index for ties
        order = np.lexsort((cols, -row))
        order = order[order != i][:k_n]
        src[i * k_n : (i + 1) * k_n] = i
        dst[i * k_n : (i + 1) * k_n] = order
        w[i * k_n : (i + 1) * k_n] = row[order]
    np.maximum(w, 0.0, out=w)  # clamp negatives after selection
    np.minimum(w, 1.0, out=w)  # cosine of identical rows can round above 1
    return SparseGraph(n, src, dst, w)


def top_k_global(graph, K):
    """Keep the K globally largest weights; ties toward smaller (src, dst)."""
    if K < 0:
        raise ValueError("K must be non-negative")
    if graph.nnz <= K:
        return graph
    order = np.lexsort((graph.dst, graph.src, -graph.w))[:K]
    return SparseGraph(graph.n, graph.src[order], graph.dst[order], graph.w[order])


def dump_edges(graphs_by_id, step, fh):
    """Append one step's graphs as CSV rows (step, graph id, i, j, weight)."""
    for gid, graph in graphs_by_id.items():
        for s, d, w in zip(graph.src, graph.dst, graph.w):
            fh.write(f"{step},{gid},{int(s)},{int(d)},{float(w)!r}\n")
