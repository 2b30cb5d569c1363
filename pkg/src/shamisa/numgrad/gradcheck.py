"""Finite-difference checking against the reverse sweep.

The reference side only ever calls `evaluate`, so it is independent of
the backward tables.
"""

import numpy as np

from .graph import evaluate, gradient


def finite_difference(graph, wrt, seed, h=1e-5):
    """Central-difference derivative of output `seed` w.r.t. input `wrt`.

    `seed` may be an output name, an input name, or a node reference.
    """
    idx = graph.inputs[wrt]
    out_idx = graph._resolve(seed)
    base = graph.nodes[idx].value.copy()
    out = np.zeros_like(base)
    flat_out = out.reshape(-1)
    work = base.copy()
    flat = work.reshape(-1)

    def value_at():
        graph.bind({wrt: work})
        graph.recompute()
        return float(graph.nodes[out_idx].value)

    try:
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = value_at()
            flat[i] = orig - h
            lo = value_at()
            flat[i] = orig
            flat_out[i] = (hi - lo) / (2.0 * h)
    finally:
        graph.bind({wrt: base})
        graph.recompute()
    return out


def max_rel_err(a, b):
    """Worst per-entry relative difference, scale-aware.

    Entries below 1e-3 of the gradient's overall magnitude are compared
    relative to that magnitude instead of their own: central differences
    carry ~|f|*eps/h of roundoff, so demanding per-entry relative
    accuracy on entries that are incidentally near zero only measures
    noise, not correctness.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not a.size:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    denom = np.maximum(
        np.maximum(np.abs(a), np.abs(b)), max(1e-3 * scale, 1e-8)
    )
    return float(np.max(np.abs(a - b) / denom))


def check_graph(graph, seed, h=1e-5):
    """Return {input name: max relative error} for requires_grad inputs."""
    auto = gradient(graph, seed=seed)
    report = {}
    for name in auto:
        fd = finite_difference(graph, name, seed, h=h)
        report[name] = max_rel_err(auto[name].data, fd)
    return report
