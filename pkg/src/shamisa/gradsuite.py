"""Finite-difference verification suite for the autodiff core.

Every primitive, the soft-assignment head, every objective term, and
the fully composed training loss are checked against central finite
differences on several random shapes. The one non-smooth citizen,
stop_gradient, is checked against its defining semantics instead:
forward identity, exactly zero gradient through its branch.
"""

from dataclasses import dataclass

import numpy as np

from .engine.batch import EngineConfig, build_batch
from .graphs import SparseGraph
from .model import ModelConfig
from .numgrad import Graph, ops
from .numgrad.gradcheck import check_graph, max_rel_err
from .numgrad.optim import SGDConfig
from .objective import (
    LossWeights,
    graph_regularizer,
    loss_cov,
    loss_inv_weighted,
    loss_var,
)
from .ot import ot_loss, sinkhorn_targets, soft_assign
from .rng import substream
from .trainer import TrainConfig, build_step_graph, init_train


@dataclass
class CheckResult:
    name: str
    max_err: float
    passed: bool
    cases: int


def _scalarize(g, expr, rng):
    """Random-weighted sum: turns any output into a scalar without
    letting sign or permutation errors cancel."""
    w = g.constant(rng.normal(size=expr.shape))
    return ops.sum(ops.multiply(expr, w))


def _run_cases(builders, tol):
    worst = 0.0
    for build in builders:
        g = Graph()
        out = g.mark_output("y", build(g))
        report = check_graph(g, out)
        if report:
            worst = max(worst, max(report.values()))
    return worst


def _elementwise_shapes(rng):
    return [
        ((3, 4), (3, 4)),
        ((3, 1), (1, 4)),
        ((5,), (2, 5)),
        ((1,), (4, 2)),
        ((2, 3, 2), (2, 3, 2)),
    ]


def _binary_builders(op, rng):
    builders = []
    for sa, sb in _elementwise_shapes(rng):
        a_val = rng.normal(size=sa)
        b_val = rng.normal(size=sb)

        def build(g, a_val=a_val, b_val=b_val):
            a = g.input("a", a_val, requires_grad=True)
            b = g.input("b", b_val, requires_grad=True)
            return _scalarize(g, getattr(ops, op)(a, b), rng)

        builders.append(build)
    return builders


def _unary_builders(rng, sample, fn):
    builders = []
    for shape in [(3, 4), (6,), (2, 3, 4), (5, 1), (4, 4)]:
        val = sample(shape)

        def build(g, val=val):
            x = g.input("x", val, requires_grad=True)
            return _scalarize(g, fn(x), rng)

        builders.append(build)
    return builders


def _matmul_builders(rng):
    cases = [
        ((2, 3), (3, 4), False, False),
        ((3, 2), (3, 4), True, False),
        ((2, 3), (4, 3), False, True),
        ((3, 2), (4, 3), True, True),
        ((5, 7), (7, 2), False, False),
    ]
    builders = []
    for sa, sb, ta, tb in cases:
        a_val = rng.normal(size=sa)
        b_val = rng.normal(size=sb)

        def build(g, a_val=a_val, b_val=b_val, ta=ta, tb=tb):
            a = g.input("a", a_val, requires_grad=True)
            b = g.input("b", b_val, requires_grad=True)
            return _scalarize(g, ops.matmul(a, b, transpose_a=ta, transpose_b=tb), rng)

        builders.append(build)
    return builders


def _conv_builders(rng):
    cases = [
        ((2, 3, 8, 8), (4, 3, 3, 3), 1, 1),
        ((1, 2, 6, 7), (3, 2, 3, 3), 2, 1),
        ((2, 1, 5, 5), (2, 1, 1, 1), 1, 0),
        ((1, 3, 7, 6), (2, 3, 3, 3), 2, 0),
        ((2, 2, 6, 6), (3, 2, 3, 3), 1, 0),
    ]
    builders = []
    for sx, sw, stride, padding in cases:
        x_val = rng.normal(size=sx)
        w_val = rng.normal(size=sw) * 0.5

        def build(g, x_val=x_val, w_val=w_val, stride=stride, padding=padding):
            x = g.input("x", x_val, requires_grad=True)
            w = g.input("w", w_val, requires_grad=True)
            return _scalarize(g, ops.conv2d(x, w, stride=stride, padding=padding), rng)

        builders.append(build)
    return builders


def _reduce_builders(rng, op):
    cases = [
        ((3, 4), None, False),
        ((3, 4), 0, False),
        ((3, 4), 1, True),
        ((2, 3, 4), 2, False),
        ((5,), 0, False),
    ]
    builders = []
    for shape, axis, keep in cases:
        val = rng.normal(size=shape)

        def build(g, val=val, axis=axis, keep=keep):
            x = g.input("x", val, requires_grad=True)
            return _scalarize(g, getattr(ops, op)(x, axis=axis, keepdims=keep), rng)

        builders.append(build)
    return builders


def _away_from(rng, shape, lo, hi, signed=False):
    x = rng.uniform(lo, hi, size=shape)
    if signed:
        x *= np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return x


def _softmax_builders(rng):
    builders = []
    for shape in [(4, 6), (2, 3), (7, 2), (1, 5), (6, 6)]:
        val = rng.normal(size=shape)

        def build(g, val=val):
            x = g.input("x", val, requires_grad=True)
            return _scalarize(g, ops.row_softmax(x), rng)

        builders.append(build)
    return builders


def _gap_builders(rng):
    builders = []
    for shape in [(2, 3, 5, 5), (1, 4, 2, 3), (3, 1, 4, 4), (2, 2, 1, 6), (1, 1, 3, 3)]:
        val = rng.normal(size=shape)

        def build(g, val=val):
            x = g.input("x", val, requires_grad=True)
            return _scalarize(g, ops.global_average_pool(x), rng)

        builders.append(build)
    return builders


def _pairwise_builders(rng):
    builders = []
    for shape in [(5, 3), (3, 4), (6, 2), (4, 4), (7, 5)]:
        val = rng.normal(size=shape)

        def build(g, val=val):
            z = g.input("z", val, requires_grad=True)
            return _scalarize(g, ops.pairwise_sqdist(z), rng)

        builders.append(build)
    return builders


def _check_stop_gradient(rng, tol):
    """Forward identity; the guarded branch contributes exactly zero."""
    worst = 0.0
    for shape in [(3, 4), (5,), (2, 3, 2), (4, 1), (6, 6)]:
        val = rng.normal(size=shape)
        g = Graph()
        x = g.input("x", val, requires_grad=True)
        guarded = ops.stop_gradient(ops.square(x))
        if not np.array_equal(guarded.value, val * val):
            return np.inf
        y = g.mark_output("y", ops.sum(ops.multiply(x, guarded)))
        g.backward(y)
        auto = g.nodes[x.idx].grad
        worst = max(worst, max_rel_err(auto, val * val))
    return worst


def _soft_assign_builders(rng):
    builders = []
    for n, d, k in [(6, 4, 3), (4, 2, 2), (8, 5, 4), (3, 3, 5), (5, 6, 2)]:
        h_val = rng.normal(size=(n, d))
        c_val = rng.normal(size=(k, d))

        def build(g, h_val=h_val, c_val=c_val):
            h = g.input("h", h_val, requires_grad=True)
            c = g.input("c", c_val, requires_grad=True)
            return _scalarize(g, soft_assign(h, c, 0.3), rng)

        builders.append(build)
    return builders


def _loss_z_builders(rng, term):
    builders = []
    for n, d in [(6, 4), (4, 3), (8, 2), (5, 5), (7, 3)]:
        val = rng.normal(size=(n, d)) * 0.7

        def build(g, val=val):
            z = g.input("z", val, requires_grad=True)
            return term(z)

        builders.append(build)
    return builders


def _random_graph(rng, n, m):
    pairs = set()
    while len(pairs) < m:
        s = int(rng.integers(n))
        d = int(rng.integers(n))
        if s != d:
            pairs.add((s, d))
    src = np.array([p[0] for p in pairs], np.int64)
    dst = np.array([p[1] for p in pairs], np.int64)
    return SparseGraph(n, src, dst, rng.uniform(0.05, 1.0, size=len(pairs)))


def _loss_inv_builders(rng):
    builders = []
    for n, d, m, red in [
        (6, 4, 8, "mean"),
        (5, 3, 6, "sum"),
        (8, 2, 12, "mean"),
        (4, 5, 4, "sum"),
        (7, 3, 10, "mean"),
    ]:
        val = rng.normal(size=(n, d))
        graph = _random_graph(rng, n, m)

        def build(g, val=val, graph=graph, red=red):
            z = g.input("z", val, requires_grad=True)
            return loss_inv_weighted(z, graph, reduction=red)

        builders.append(build)
    return builders


def _regularizer_builders(rng):
    builders = []
    for m in [3, 6, 1, 10, 5]:
        val = rng.uniform(0.05, 1.0, size=(1, m))

        def build(g, val=val):
            w = g.input("w", val, requires_grad=True)
            return graph_regularizer(w)

        builders.append(build)
    return builders


def _ot_loss_builders(rng):
    builders = []
    for n, d, k in [(6, 4, 3), (4, 3, 2), (8, 2, 4), (5, 5, 3), (7, 3, 2)]:
        h_val = rng.normal(size=(n, d))
        c_val = rng.normal(size=(k, d))
        pairs = [(0, 1), (1, 0), (2, 3)] if n >= 4 else [(0, 1)]

        def build(g, h_val=h_val, c_val=c_val, pairs=pairs):
            h = g.input("h", h_val, requires_grad=True)
            c = g.input("c", c_val, requires_grad=True)
            a = soft_assign(h, c, 0.5)
            targets = sinkhorn_targets(a.value, eps_sk=0.1, iterations=4, tau_c=0.5)
            return ot_loss(g, a, targets, pairs)

        builders.append(build)
    return builders


def _tiny_train_config(seed):
    return TrainConfig(
        engine=EngineConfig(B=1, R=2, C=1, L=2, M_d=2, crop=8),
        model=ModelConfig(blocks=(4,), d_h=6, d_z=4, input_size=8),
        weights=LossWeights(),
        optimizer=SGDConfig(),
        k_n=2,
        K_d=16,
        k_g_mult=8,
        K=3,
        steps=1,
        seed=seed,
    )


def _check_total_loss(rng, tol):
    """FD over every trainable tensor of the fully composed objective."""
    worst = 0.0
    for case in range(2):
        cfg = _tiny_train_config(int(rng.integers(1 << 30)) + case)
        params, _ = init_train(cfg)
        images = [
            substream(cfg.seed, "images", i).uniform(0.0, 1.0, size=(3, 8, 8))
            for i in range(cfg.engine.n_ref)
        ]
        x, meta = build_batch(images, cfg.engine, base_key=(cfg.seed, "batch", 0))
        g, _, total, _, _, _, _ = build_step_graph(cfg, params, x, meta)
        g.mark_output("total", total)
        report = check_graph(g, total)
        if report:
            worst = max(worst, max(report.values()))
    return worst


def run_suite(seed=2026, tol=1e-4):
    """Run every check; returns a list of CheckResult rows."""
    results = []

    def fd(name, builders):
        err = _run_cases(builders, tol)
        results.append(CheckResult(name, err, err <= tol, len(builders)))

    rng = substream(seed, "gradsuite")
    fd("add", _binary_builders("add", rng))
    fd("subtract", _binary_builders("subtract", rng))
    fd("multiply", _binary_builders("multiply", rng))
    fd(
        "scalar_multiply",
        _unary_builders(rng, lambda s: rng.normal(size=s), lambda x: ops.scalar_multiply(x, -1.7)),
    )
    fd("matmul", _matmul_builders(rng))
    fd("conv2d", _conv_builders(rng))
    fd(
        "relu",
        _unary_builders(rng, lambda s: _away_from(rng, s, 0.2, 1.5, signed=True), ops.relu),
    )
    fd("exp", _unary_builders(rng, lambda s: rng.uniform(-2, 2, size=s), ops.exp))
    fd("log", _unary_builders(rng, lambda s: rng.uniform(0.5, 3.0, size=s), ops.log))
    fd("sqrt", _unary_builders(rng, lambda s: rng.uniform(0.3, 3.0, size=s), ops.sqrt))
    fd("square", _unary_builders(rng, lambda s: rng.normal(size=s), ops.square))
    fd("sum", _reduce_builders(rng, "sum"))
    fd("mean", _reduce_builders(rng, "mean"))
    fd("row_softmax", _softmax_builders(rng))
    fd("global_average_pool", _gap_builders(rng))
    fd("pairwise_sqdist", _pairwise_builders(rng))

    err = _check_stop_gradient(rng, tol)
    results.append(CheckResult("stop_gradient", err, err <= 1e-12, 5))

    fd("soft_assign", _soft_assign_builders(rng))
    fd("loss_var", _loss_z_builders(rng, loss_var))
    fd("loss_cov", _loss_z_builders(rng, loss_cov))
    fd("loss_inv_weighted", _loss_inv_builders(rng))
    fd("graph_regularizer", _regularizer_builders(rng))
    fd("ot_loss", _ot_loss_builders(rng))

    err = _check_total_loss(rng, tol)
    results.append(CheckResult("total_loss", err, err <= tol, 2))
    return results


def format_report(results):
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_err:.3e}  ({r.cases} cases)  {status}")
    return "\n".join(lines)
