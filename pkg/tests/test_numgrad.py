"""Autodiff core: forward values, gradients vs central differences,
optimizer algebra, and checkpoint serialization."""

import math

import numpy as np
import pytest

from shamisa.numgrad import ops
from shamisa.numgrad.checkpoint import load_checkpoint, save_checkpoint
from shamisa.numgrad.gradcheck import check_graph, finite_difference, max_rel_err
from shamisa.numgrad.graph import Graph, PRIMITIVES, Tensor, evaluate, gradient
from shamisa.numgrad.optim import SGDConfig, cosine_lr, init_state, sgd_step


def test_primitive_set_is_closed():
    assert sorted(PRIMITIVES) == sorted(
        [
            "add",
            "subtract",
            "multiply",
            "scalar_multiply",
            "matmul",
            "conv2d",
            "relu",
            "exp",
            "log",
            "sqrt",
            "square",
            "sum",
            "mean",
            "row_softmax",
            "global_average_pool",
            "pairwise_sqdist",
            "stop_gradient",
        ]
    )


def test_square_at_three():
    g = Graph()
    x = g.input("x", 3.0, requires_grad=True)
    y = ops.square(x)
    g.mark_output("y", y)
    assert evaluate(g)["y"].data == 9.0
    g.backward(y)
    assert g.nodes[g.inputs["x"]].grad == 6.0


def test_relu_values_and_dead_gradient():
    g = Graph()
    x = g.input("x", [-1.0, 0.0, 2.0], requires_grad=True)
    r = ops.relu(x)
    np.testing.assert_array_equal(r.value, [0.0, 0.0, 2.0])
    g.backward(ops.sum(r))
    np.testing.assert_array_equal(g.nodes[g.inputs["x"]].grad, [0.0, 0.0, 1.0])


def test_identity_matmul():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(2, 2))
    g = Graph()
    eye = g.input("i", np.eye(2))
    mm = g.input("m", m)
    y = ops.matmul(eye, mm)
    np.testing.assert_array_equal(y.value, m)


def test_matmul_gradient_matches_central_differences():
    rng = np.random.default_rng(1)
    g = Graph()
    a = g.input("a", rng.normal(size=(4, 5)), requires_grad=True)
    b = g.input("b", rng.normal(size=(5, 3)), requires_grad=True)
    g.mark_output("loss", ops.sum(ops.matmul(a, b)))
    g.backward("loss")
    for name in ("a", "b"):
        node = g.nodes[g.inputs[name]]
        num = finite_difference(g, name, "loss")
        assert max_rel_err(node.grad, num) <= 1e-6


@pytest.mark.parametrize(
    "op,shape",
    [
        ("exp", (3, 4)),
        ("sqrt", (5,)),
        ("log", (4, 2)),
        ("row_softmax", (6, 5)),
        ("pairwise_sqdist", (7, 3)),
        ("global_average_pool", (2, 3, 5, 4)),
    ],
)
def test_unary_gradients_match_central_differences(op, shape):
    rng = np.random.default_rng(abs(hash(op)) % 2**32)
    g = Graph()
    x = g.input("x", rng.uniform(0.5, 2.0, size=shape), requires_grad=True)
    y = g.apply(op, (x,), **({"clamp_min": None} if op == "log" else {}))
    g.mark_output("loss", ops.sum(ops.square(y)))
    report = check_graph(g, "loss")
    assert report["x"] <= 1e-5


def test_broadcast_add_gradient_reduces():
    g = Graph()
    a = g.input("a", np.ones((3, 4)), requires_grad=True)
    b = g.input("b", np.ones((1, 4)), requires_grad=True)
    loss = ops.sum(ops.add(a, b))
    g.backward(loss)
    assert g.nodes[g.inputs["b"]].grad.shape == (1, 4)
    np.testing.assert_array_equal(g.nodes[g.inputs["b"]].grad, np.full((1, 4), 3.0))


def test_stop_gradient_blocks_flow():
    g = Graph()
    x = g.input("x", [1.0, 2.0], requires_grad=True)
    y = ops.sum(ops.multiply(ops.stop_gradient(x), x))
    g.backward(y)
    # d/dx of c*x where c = x detached: the gradient is the detached value.
    np.testing.assert_array_equal(g.nodes[g.inputs["x"]].grad, [1.0, 2.0])


def test_input_rebind_and_recompute():
    g = Graph()
    x = g.input("x", 2.0, requires_grad=True)
    g.mark_output("y", ops.square(x))
    assert evaluate(g)["y"].data == 4.0
    assert evaluate(g, {"x": Tensor(5.0)})["y"].data == 25.0


def test_non_finite_forward_is_an_error():
    g = Graph()
    x = g.input("x", [1.0, 0.0])
    ops.log(x)  # log(0) = -inf
    with pytest.raises(ArithmeticError, match="non-finite"):
        g.recompute()


def test_gradient_api_returns_named_tensors():
    g = Graph()
    x = g.input("x", [1.0, 2.0], requires_grad=True)
    c = g.input("c", [3.0, 4.0])
    g.mark_output("loss", ops.sum(ops.multiply(x, c)))
    grads = gradient(g, seed="loss")
    assert set(grads) == {"x"}
    np.testing.assert_array_equal(grads["x"].data, [3.0, 4.0])


def test_seed_must_be_scalar():
    g = Graph()
    x = g.input("x", [1.0, 2.0], requires_grad=True)
    y = ops.square(x)
    with pytest.raises(ValueError, match="scalar"):
        g.backward(y)


def test_cross_graph_nodes_rejected():
    g1, g2 = Graph(), Graph()
    a = g1.input("a", 1.0)
    b = g2.input("b", 2.0)
    with pytest.raises(ValueError, match="different graph"):
        ops.add(a, b)


def test_tensor_shape_and_grad_contract():
    t = Tensor(np.zeros((2, 3)), requires_grad=True)
    assert t.shape == (2, 3)
    assert t.grad is None


# ------------------------------------------------------------------ optimizer


def test_sgd_zero_gradient_is_fixed_point():
    params = {"w": np.array([1.0, -2.0])}
    state = init_state(params)
    cfg = SGDConfig(lr=0.1, momentum=0.9, weight_decay=0.0)
    new, _ = sgd_step(params, {"w": np.zeros(2)}, state, cfg)
    np.testing.assert_array_equal(new["w"], params["w"])


def test_sgd_hand_step():
    params = {"p": np.array([1.0])}
    state = init_state(params)
    cfg = SGDConfig(lr=0.1, momentum=0.0, weight_decay=0.0)
    new, _ = sgd_step(params, {"p": np.array([2.0])}, state, cfg)
    np.testing.assert_allclose(new["p"], [0.8])


def test_sgd_momentum_accumulates():
    # min_lr_factor=1 pins the schedule at the base lr for a clean hand check
    params = {"p": np.array([0.0])}
    state = init_state(params)
    cfg = SGDConfig(lr=1.0, momentum=0.5, weight_decay=0.0, min_lr_factor=1.0)
    p1, state = sgd_step(params, {"p": np.array([1.0])}, state, cfg)
    p2, _ = sgd_step(p1, {"p": np.array([1.0])}, state, cfg)
    # v1 = 1, p1 = -1; v2 = 0.5 + 1 = 1.5, p2 = -2.5
    np.testing.assert_allclose(p2["p"], [-2.5])


def test_cosine_schedule_matches_closed_form():
    cfg = SGDConfig(lr=0.4, min_lr_factor=0.01, period=100, period_mult=2)
    lo = 0.4 * 0.01
    assert cosine_lr(0, cfg) == pytest.approx(0.4)
    for step in (1, 17, 50, 99):
        want = lo + 0.5 * (0.4 - lo) * (1 + math.cos(math.pi * step / 99))
        assert cosine_lr(step, cfg) == pytest.approx(want, rel=1e-12)
    # period end hits the minimum lr, then the restart returns to base lr
    assert cosine_lr(99, cfg) == pytest.approx(lo)
    assert cosine_lr(100, cfg) == pytest.approx(0.4)
    # second period spans 200 steps
    want = lo + 0.5 * (0.4 - lo) * (1 + math.cos(math.pi * 150 / 199))
    assert cosine_lr(250, cfg) == pytest.approx(want, rel=1e-12)


def test_lr_bounds_over_many_steps():
    cfg = SGDConfig(lr=0.3, min_lr_factor=0.05, period=7, period_mult=2)
    for step in range(200):
        lr = cosine_lr(step, cfg)
        assert 0.0 < lr <= 0.3 + 1e-15


def test_sgd_missing_gradient_raises():
    params = {"p": np.array([1.0])}
    state = init_state(params)
    with pytest.raises(KeyError):
        sgd_step(params, {}, state, SGDConfig())


def test_sgd_non_finite_gradient_raises():
    params = {"p": np.array([1.0])}
    state = init_state(params)
    with pytest.raises(ArithmeticError):
        sgd_step(params, {"p": np.array([np.nan])}, state, SGDConfig())


def test_velocity_shapes_match_parameters():
    params = {"a": np.zeros((2, 3)), "b": np.zeros(5)}
    state = init_state(params)
    for k, v in params.items():
        assert state["velocity"][k].shape == v.shape


# ----------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path, rng):
    entries = {
        "enc.w": rng.normal(size=(4, 3, 3, 3)),
        "bias": rng.normal(size=(7,)),
        "scalar": np.array(3.5),
    }
    path = tmp_path / "x.shck"
    save_checkpoint(path, entries)
    back = load_checkpoint(path)
    assert set(back) == set(entries)
    for k in entries:
        np.testing.assert_array_equal(back[k], entries[k])
        assert back[k].dtype == np.float64


def test_checkpoint_magic_and_truncation(tmp_path, rng):
    path = tmp_path / "x.shck"
    save_checkpoint(path, {"w": rng.normal(size=(2, 2))})
    raw = path.read_bytes()
    assert raw[:4] == b"SHCK"
    (tmp_path / "bad.shck").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.shck")
