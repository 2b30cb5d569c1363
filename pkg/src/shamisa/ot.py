"""Optimal-transport clustering guidance.

Soft prototype assignments, log-domain Sinkhorn-Knopp balancing toward
uniform cluster marginals, the two-term OT loss (self term over all
rows plus a cross-content swap term), and the assignment-affinity graph
derived from A under stop-gradient.
"""

import numpy as np
from scipy.special import logsumexp

from .graphs import SparseGraph, empty_graph, top_k_global
from .numgrad import ops

LOG_CLAMP = 1e-12


def init_prototypes(k, d_h, rng):
    if k < 1:
        raise ValueError("need at least one prototype")
    return rng.normal(0.0, 1.0 / np.sqrt(d_h), size=(k, d_h))


def soft_assign(h, prototypes, tau_c):
    """Row-softmax of H C^T / tau_c as a differentiable graph node."""
    if tau_c <= 0.0:
        raise ValueError("tau_c must be positive")
    logits = ops.scalar_multiply(
        ops.matmul(h, prototypes, transpose_b=True), 1.0 / tau_c
    )
    return ops.row_softmax(logits)


def sinkhorn_targets(
    a, eps_sk=0.05, iterations=3, tau_c=0.1, tol=None, return_residuals=False
):
    """Balanced targets: row sums 1, column sums N/K.

    The kernel re-tempers the assignment logits at eps_sk: since A is a
    row-softmax at temperature tau_c, the balanced matrix is
    A^(tau_c/eps_sk), sharper than A whenever eps_sk < tau_c. Runs
    entirely in the log domain on plain arrays, so the targets are
    constants to the optimizer. With `tol` set, iterates until the
    column-marginal residual drops below it (capped at 10000 sweeps).
    """
    a = np.asarray(a, dtype=np.float64)
    if eps_sk <= 0.0:
        raise ValueError("eps_sk must be positive")
    if tau_c <= 0.0:
        raise ValueError("tau_c must be positive")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    n, k = a.shape
    log_m = np.log(np.maximum(a, LOG_CLAMP)) * (tau_c / eps_sk)
    col_target = n / k
    f = np.zeros(n)
    g = np.zeros(k)
    residuals = []
    max_sweeps = 10000 if tol is not None else iterations
    for _ in range(max_sweeps):
        g = np.log(col_target) - logsumexp(log_m + f[:, None], axis=0)
        f = -logsumexp(log_m + g[None, :], axis=1)
        t = np.exp(log_m + f[:, None] + g[None, :])
        residual = float(np.max(np.abs(t.sum(axis=0) - col_target)))
        residuals.append(residual)
        if tol is not None and residual <= tol:
            break
    t = np.exp(log_m + f[:, None] + g[None, :])
    if return_residuals:
        return t, residuals
    return t


def cross_content_pairs(meta):
    """Ordered pairs of distorted rows sharing (i, k, l) with j != j'."""
    c = meta.config
    pairs = []
    for i in range(c.B):
        for k in range(c.C):
            for l in range(c.L):
                rows = [meta.row_of(i, j, k, l) for j in range(c.R)]
                for u in rows:
                    for v in rows:
                        if u != v:
                            pairs.append((u, v))
    return pairs


def ot_loss(graph, a_node, targets, pairs):
    """(1/N) sum CE(T_n, A_n) + (1/|P|) sum CE(T_u, A_v) over pairs.

    `targets` enter as constants; the assignment log is clamped at
    1e-12 and every clamp is counted on the graph.
    """
    n = a_node.shape[0]
    t_const = graph.constant(targets)
    log_a = ops.log(a_node, clamp_min=LOG_CLAMP)
    self_term = ops.scalar_multiply(
        ops.sum(ops.multiply(t_const, log_a)), -1.0 / n
    )
    if not pairs:
        return self_term
    u_idx = np.array([p[0] for p in pairs], np.int64)
    v_idx = np.array([p[1] for p in pairs], np.int64)
    pick_v = np.zeros((len(pairs), n))
    pick_v[np.arange(len(pairs)), v_idx] = 1.0
    log_a_v = ops.log(ops.matmul(graph.constant(pick_v), a_node), clamp_min=LOG_CLAMP)
    t_u = graph.constant(targets[u_idx])
    pair_term = ops.scalar_multiply(
        ops.sum(ops.multiply(t_u, log_a_v)), -1.0 / len(pairs)
    )
    return ops.add(self_term, pair_term)


def build_go(a, K_g, row_topk=0):
    """Assignment-affinity graph from A values (stop-gradient by construction).

    S_ij = sum_k A_ik log A_jk, diagonal dropped, min-max normalized
    over the off-diagonal entries, then global Top-K_g (or row-wise
    top-k when `row_topk` is set).
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if K_g < 0:
        raise ValueError("K_g must be non-negative")
    if K_g == 0:
        return empty_graph(n)
    if n < 2:
        return empty_graph(n)
    s = a @ np.log(np.maximum(a, LOG_CLAMP)).T
    off = ~np.eye(n, dtype=bool)
    vals = s[off]
    lo, hi = vals.min(), vals.max()
    if hi > lo:
        norm = (s - lo) / (hi - lo)
    else:
        norm = np.ones_like(s)  # degenerate spread: every edge saturates
    src, dst = np.nonzero(off)
    graph = SparseGraph(n, src.astype(np.int64), dst.astype(np.int64), norm[off])
    if row_topk > 0:
        return _row_topk(graph, row_topk)
    return top_k_global(graph, K_g)


def _row_topk(graph, k):
    keep = []
    order = np.lexsort((graph.dst, -graph.w, graph.src))
    src_sorted = graph.src[order]
    start = 0
    while start < order.size:
        end = start
        while end < order.size and src_sorted[end] == src_sorted[start]:
            end += 1
        keep.extend(order[start : start + min(k, end - start)])
        start = end
    keep = np.array(sorted(keep), np.int64)
    return SparseGraph(graph.n, graph.src[keep], graph.dst[keep], graph.w[keep])
