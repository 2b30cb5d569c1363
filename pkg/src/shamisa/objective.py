"""Training objective.

Variance and covariance terms over the projections, graph-weighted
invariance over the aggregated relation graph, the OT guidance term,
and a regularizer that rewards edge mass. Sources are mixed by a small
feed-forward net over per-graph statistics; edge values always pass
through stop-gradient, so structure never backpropagates — only the
mixing coefficients do.
"""

from dataclasses import dataclass

import numpy as np

from .graphs import SparseGraph
from .numgrad import ops
from . import ot as _ot

SOURCE_IDS = ("rd", "dd", "rr", "knn", "ot")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 11.98
    beta: float = 57.21
    gamma: float = 88.37
    eta: float = 0.4906
    xi: float = 0.0342

    def __post_init__(self):
        for f in ("alpha", "beta", "gamma", "eta", "xi"):
            if getattr(self, f) < 0:
                raise ValueError(f"loss weight {f} must be nonnegative")


def _centered(z):
    mu = ops.mean(z, axis=0, keepdims=True)
    return ops.subtract(z, mu)


def _column_var(zc, n):
    return ops.scalar_multiply(ops.sum(ops.square(zc), axis=0), 1.0 / (n - 1))


def loss_var(z):
    """Hinge at unit per-dimension standard deviation."""
    n = z.shape[0]
    if n < 2:
        raise ValueError("variance needs at least two rows")
    g = z.graph
    std = ops.sqrt(_column_var(_centered(z), n))
    return ops.sum(ops.relu(ops.subtract(g.constant(1.0), std)))


def loss_cov(z):
    """Sum of squared off-diagonal covariance entries."""
    n = z.shape[0]
    if n < 2:
        raise ValueError("covariance needs at least two rows")
    zc = _centered(z)
    cov = ops.scalar_multiply(ops.matmul(zc, zc, transpose_a=True), 1.0 / (n - 1))
    total = ops.sum(ops.square(cov))
    diag = ops.sum(ops.square(_column_var(zc, n)))
    return ops.subtract(total, diag)


def _edge_selectors(n, src, dst):
    p = np.zeros((src.size, n))
    q = np.zeros((dst.size, n))
    p[np.arange(src.size), src] = 1.0
    q[np.arange(dst.size), dst] = 1.0
    return p, q


def _edge_sqdist(z, src, dst):
    g = z.graph
    p, q = _edge_selectors(z.shape[0], src, dst)
    diff = ops.subtract(ops.matmul(g.constant(p), z), ops.matmul(g.constant(q), z))
    return ops.sum(ops.square(diff), axis=1, keepdims=True)  # (m, 1)


def loss_inv_weighted(z, graph, reduction="mean"):
    """Edge-weighted squared distances: sum or mean over stored edges."""
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction: {reduction}")
    g = z.graph
    if graph.n != z.shape[0]:
        raise ValueError("graph size does not match Z")
    if graph.nnz == 0:
        return g.constant(0.0)
    d = _edge_sqdist(z, graph.src, graph.dst)
    w = g.constant(graph.w[None, :])
    out = ops.sum(ops.matmul(w, d))
    if reduction == "mean":
        out = ops.scalar_multiply(out, 1.0 / graph.nnz)
    return out


def graph_regularizer(weights):
    """Negative squared edge mass; takes a SparseGraph or a weight node."""
    if isinstance(weights, SparseGraph):
        return -float(np.sum(weights.w**2)) if weights.nnz else 0.0
    return ops.scalar_multiply(ops.sum(ops.square(weights)), -1.0)


def init_phi(n_sources, rng, hidden=16):
    # Output layer starts at zero so the mixture begins exactly uniform and
    # moves away only as the weighting head receives gradient; a random output
    # layer would saturate the softmax from the raw scale of the stats.
    n_in = 2 * n_sources
    return {
        "phi.w0": rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, hidden)),
        "phi.b0": np.zeros(hidden),
        "phi.w1": np.zeros((hidden, n_sources)),
        "phi.b1": np.zeros(n_sources),
    }


def graph_stats(sources):
    """Per source: (edge-weight sum, stored-edge count)."""
    return np.array([[s.weight_sum, float(s.nnz)] for s in sources])


@dataclass
class Aggregate:
    n: int
    src: np.ndarray
    dst: np.ndarray
    weights: object  # NodeRef (1, m), clamped mixture
    omega: object  # NodeRef (1, T)
    stats: np.ndarray
    source_ids: tuple

    @property
    def nnz(self):
        return int(self.src.size)

    def to_sparse(self):
        if self.nnz == 0:
            return SparseGraph(
                self.n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
            )
        return SparseGraph(self.n, self.src, self.dst, self.weights.value[0])


def _union_edges(sources, binary):
    table = {}
    t = len(sources)
    for si, s in enumerate(sources):
        for src, dst, w in zip(s.src, s.dst, s.w):
            key = (int(src), int(dst))
            if key not in table:
                table[key] = np.zeros(t)
            table[key][si] = 1.0 if (binary and w > 0) else w
    keys = sorted(table)
    if not keys:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.zeros((t, 0))
    src = np.array([k[0] for k in keys], np.int64)
    dst = np.array([k[1] for k in keys], np.int64)
    mat = np.stack([table[k] for k in keys], axis=1)  # (T, m)
    return src, dst, mat


def aggregate_graphs(
    g,
    sources,
    phi_nodes=None,
    fixed_mixture=False,
    binary=False,
    edge_matrix_node=None,
    source_ids=None,
):
    """Mix the source graphs into one weighted union.

    omega = softmax(Phi(log-compressed stats)); per-edge contributions
    are summed across sources and clamped to 1. Edge values enter
    through stop_gradient, so only omega carries gradient. Passing
    `edge_matrix_node` substitutes the stacked per-source edge matrix
    (used by the stop-gradient probes).
    """
    t = len(sources)
    if t == 0:
        raise ValueError("need at least one source graph")
    n = sources[0].n
    if any(s.n != n for s in sources):
        raise ValueError("source graphs disagree on node count")
    stats = graph_stats(sources)
    if fixed_mixture or phi_nodes is None:
        omega = g.constant(np.full((1, t), 1.0 / t))
    else:
        feats = g.constant(np.log1p(stats).reshape(1, 2 * t))
        h = ops.relu(ops.add(ops.matmul(feats, phi_nodes["phi.w0"]), phi_nodes["phi.b0"]))
        logits = ops.add(ops.matmul(h, phi_nodes["phi.w1"]), phi_nodes["phi.b1"])
        omega = ops.row_softmax(logits)
    src, dst, mat = _union_edges(sources, binary)
    base = edge_matrix_node if edge_matrix_node is not None else g.constant(mat)
    frozen = ops.stop_gradient(base)
    raw = ops.matmul(omega, frozen)  # (1, m)
    over = ops.relu(ops.subtract(raw, g.constant(1.0)))
    clamped = ops.subtract(raw, over)
    ids = tuple(source_ids) if source_ids is not None else SOURCE_IDS[:t]
    if len(ids) != t:
        raise ValueError("source_ids length must match sources")
    return Aggregate(n, src, dst, clamped, omega, stats, ids)


def total_loss(
    g,
    z,
    aggregate,
    weights,
    a_node=None,
    targets=None,
    pairs=None,
    inv_reduction="mean",
):
    """Weighted sum of all objective terms plus a per-term value map."""
    parts = {}
    terms = []

    lv = loss_var(z)
    lc = loss_cov(z)
    parts["var"] = float(lv.value)
    parts["cov"] = float(lc.value)
    terms.append(ops.scalar_multiply(lv, weights.alpha))
    terms.append(ops.scalar_multiply(lc, weights.beta))

    if aggregate.nnz:
        d = _edge_sqdist(z, aggregate.src, aggregate.dst)
        inv = ops.sum(ops.matmul(aggregate.weights, d))
        if inv_reduction == "mean":
            inv = ops.scalar_multiply(inv, 1.0 / aggregate.nnz)
        elif inv_reduction != "sum":
            raise ValueError(f"unknown reduction: {inv_reduction}")
        reg = graph_regularizer(aggregate.weights)
    else:
        inv = g.constant(0.0)
        reg = g.constant(0.0)
    parts["inv"] = float(inv.value)
    parts["reg"] = float(reg.value)
    terms.append(ops.scalar_multiply(inv, weights.gamma))
    terms.append(ops.scalar_multiply(reg, weights.xi))

    if a_node is not None and targets is not None and weights.eta != 0.0:
        lot = _ot.ot_loss(g, a_node, targets, pairs or [])
        parts["ot"] = float(lot.value)
        terms.append(ops.scalar_multiply(lot, weights.eta))
    else:
        parts["ot"] = 0.0

    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    parts["total"] = float(total.value)
    for name, val in zip(aggregate.source_ids, aggregate.omega.value[0]):
        parts[f"omega_{name}"] = float(val)
    return total, parts
