"""Reverse-mode autodiff over dense float64 tensors.

A Graph is an ordered list of primitive-op applications built eagerly:
each application computes its value immediately, so partially built
graphs can be inspected mid-construction (needed when a later part of
the graph depends on values derived outside autodiff, e.g. transport
targets). `evaluate` re-runs the whole list against freshly bound
inputs; `gradient` runs the reverse sweep from a scalar seed.

The primitive set is closed: add, subtract, multiply, scalar_multiply,
matmul, conv2d, relu, exp, log, sqrt, square, sum, mean, row_softmax,
global_average_pool, pairwise_sqdist, stop_gradient.
"""

import numpy as np

from .. import _kernels


class Tensor:
    """Dense float64 value with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Node:
    __slots__ = ("op", "inputs", "params", "value", "grad", "requires", "name")

    def __init__(self, op, inputs, params, value, requires, name=None):
        self.op = op
        self.inputs = inputs
        self.params = params
        self.value = value
        self.grad = None
        self.requires = requires
        self.name = name


class NodeRef:
    """Handle to a graph node; supports +, -, * and @ sugar."""

    __slots__ = ("graph", "idx")

    def __init__(self, graph, idx):
        self.graph = graph
        self.idx = idx

    @property
    def value(self):
        return self.graph.nodes[self.idx].value

    @property
    def grad(self):
        return self.graph.nodes[self.idx].grad

    @property
    def shape(self):
        return self.graph.nodes[self.idx].value.shape

    def __add__(self, other):
        return self.graph.apply("add", (self, self.graph.as_ref(other)))

    def __sub__(self, other):
        return self.graph.apply("subtract", (self, self.graph.as_ref(other)))

    def __mul__(self, other):
        if isinstance(other, NodeRef):
            return self.graph.apply("multiply", (self, other))
        return self.graph.apply("scalar_multiply", (self,), c=float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.apply("scalar_multiply", (self,), c=-1.0)

    def __matmul__(self, other):
        return self.graph.apply("matmul", (self, other))


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _expand_reduced(g, x_shape, axis, keepdims):
    g = np.asarray(g)
    if axis is None:
        return np.broadcast_to(g, x_shape)
    ax = axis if isinstance(axis, tuple) else (axis,)
    ax = tuple(a % len(x_shape) for a in ax)
    if not keepdims:
        shape = [1 if i in ax else s for i, s in enumerate(x_shape)]
        g = g.reshape(shape)
    return np.broadcast_to(g, x_shape)


def _reduce_count(x_shape, axis):
    if axis is None:
        return int(np.prod(x_shape)) if x_shape else 1
    ax = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for a in ax:
        n *= x_shape[a % len(x_shape)]
    return n


# ---------------------------------------------------------------------------
# forward table: fn(graph, params, *input arrays) -> array

def _fw_add(_g, _p, a, b):
    return a + b


def _fw_subtract(_g, _p, a, b):
    return a - b


def _fw_multiply(_g, _p, a, b):
    return a * b


def _fw_scalar_multiply(_g, p, a):
    return a * p["c"]


def _fw_matmul(_g, p, a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    aa = a.T if p["transpose_a"] else a
    bb = b.T if p["transpose_b"] else b
    if aa.shape[1] != bb.shape[0]:
        raise ValueError(f"matmul inner extents differ: {aa.shape} @ {bb.shape}")
    return aa @ bb


def _fw_conv2d(_g, p, x, w):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: {x.shape} vs {w.shape}")
    stride, padding = p["stride"], p["padding"]
    ho = _kernels.out_extent(x.shape[2], w.shape[2], stride, padding)
    wo = _kernels.out_extent(x.shape[3], w.shape[3], stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError("conv2d output would be empty")
    return _kernels.conv2d_forward(x, w, stride, padding)


def _fw_relu(_g, _p, x):
    return np.maximum(x, 0.0)


def _fw_exp(_g, _p, x):
    return np.exp(x)


def _fw_log(g, p, x):
    cm = p["clamp_min"]
    if cm is not None:
        clamped = x < cm
        if clamped.any():
            g.clamp_events += int(clamped.sum())
        x = np.maximum(x, cm)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(x)


def _fw_sqrt(_g, _p, x):
    with np.errstate(invalid="ignore"):
        return np.sqrt(x)


def _fw_square(_g, _p, x):
    return x * x


def _fw_sum(_g, p, x):
    return np.sum(x, axis=p["axis"], keepdims=p["keepdims"])


def _fw_mean(_g, p, x):
    return np.mean(x, axis=p["axis"], keepdims=p["keepdims"])


def _fw_row_softmax(_g, _p, x):
    if x.ndim != 2:
        raise ValueError(f"row_softmax expects a 2-D input, got {x.shape}")
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _fw_global_average_pool(_g, _p, x):
    if x.ndim != 4:
        raise ValueError(f"global_average_pool expects a 4-D input, got {x.shape}")
    return x.mean(axis=(2, 3))


def _fw_pairwise_sqdist(_g, _p, z):
    if z.ndim != 2:
        raise ValueError(f"pairwise_sqdist expects a 2-D input, got {z.shape}")
    sq = np.sum(z * z, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(d, 0.0, out=d)  # rounding can leave tiny negatives
    np.fill_diagonal(d, 0.0)
    return d


def _fw_stop_gradient(_g, _p, x):
    return x


_FORWARD = {
    "add": _fw_add,
    "subtract": _fw_subtract,
    "multiply": _fw_multiply,
    "scalar_multiply": _fw_scalar_multiply,
    "matmul": _fw_matmul,
    "conv2d": _fw_conv2d,
    "relu": _fw_relu,
    "exp": _fw_exp,
    "log": _fw_log,
    "sqrt": _fw_sqrt,
    "square": _fw_square,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "row_softmax": _fw_row_softmax,
    "global_average_pool": _fw_global_average_pool,
    "pairwise_sqdist": _fw_pairwise_sqdist,
    "stop_gradient": _fw_stop_gradient,
}


# ---------------------------------------------------------------------------
# backward table: fn(params, out value, input arrays, out grad) -> input grads

def _bw_add(_p, _y, ins, g):
    return _unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)


def _bw_subtract(_p, _y, ins, g):
    return _unbroadcast(g, ins[0].shape), -_unbroadcast(g, ins[1].shape)


def _bw_multiply(_p, _y, ins, g):
    a, b = ins
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _bw_scalar_multiply(p, _y, _ins, g):
    return (g * p["c"],)


def _bw_matmul(p, _y, ins, g):
    a, b = ins
    aa = a.T if p["transpose_a"] else a
    bb = b.T if p["transpose_b"] else b
    da = g @ bb.T
    db = aa.T @ g
    if p["transpose_a"]:
        da = da.T
    if p["transpose_b"]:
        db = db.T
    return da, db


def _bw_conv2d(p, _y, ins, g):
    x, w = ins
    stride, padding = p["stride"], p["padding"]
    dx = _kernels.conv2d_grad_input(g, w, x.shape[2], x.shape[3], stride, padding)
    dw = _kernels.conv2d_grad_weight(x, g, w.shape[2], w.shape[3], stride, padding)
    return dx, dw


def _bw_relu(_p, _y, ins, g):
    return (g * (ins[0] > 0.0),)


def _bw_exp(_p, y, _ins, g):
    return (g * y,)


def _bw_log(p, _y, ins, g):
    x = ins[0]
    cm = p["clamp_min"]
    if cm is None:
        return (g / x,)
    return (np.where(x > cm, g / np.maximum(x, cm), 0.0),)


def _bw_sqrt(_p, y, _ins, g):
    return (g * 0.5 / y,)


def _bw_square(_p, _y, ins, g):
    return (g * 2.0 * ins[0],)


def _bw_sum(p, _y, ins, g):
    return (_expand_reduced(g, ins[0].shape, p["axis"], p["keepdims"]).copy(),)


def _bw_mean(p, _y, ins, g):
    n = _reduce_count(ins[0].shape, p["axis"])
    return (_expand_reduced(g, ins[0].shape, p["axis"], p["keepdims"]) / n,)


def _bw_row_softmax(_p, y, _ins, g):
    return ((g - np.sum(g * y, axis=1, keepdims=True)) * y,)


def _bw_global_average_pool(_p, _y, ins, g):
    x = ins[0]
    hw = x.shape[2] * x.shape[3]
    return (np.broadcast_to(g[:, :, None, None], x.shape) / hw,)


def _bw_pairwise_sqdist(_p, _y, ins, g):
    z = ins[0]
    s = g + g.T
    return (2.0 * (s.sum(axis=1)[:, None] * z - s @ z),)


def _bw_stop_gradient(_p, _y, _ins, _g):
    return (None,)


_BACKWARD = {
    "add": _bw_add,
    "subtract": _bw_subtract,
    "multiply": _bw_multiply,
    "scalar_multiply": _bw_scalar_multiply,
    "matmul": _bw_matmul,
    "conv2d": _bw_conv2d,
    "relu": _bw_relu,
    "exp": _bw_exp,
    "log": _bw_log,
    "sqrt": _bw_sqrt,
    "square": _bw_square,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "row_softmax": _bw_row_softmax,
    "global_average_pool": _bw_global_average_pool,
    "pairwise_sqdist": _bw_pairwise_sqdist,
    "stop_gradient": _bw_stop_gradient,
}

PRIMITIVES = tuple(_FORWARD)


class Graph:
    """Ordered primitive-op applications with named inputs and outputs."""

    def __init__(self):
        self.nodes = []
        self.inputs = {}
        self.outputs = {}
        self.clamp_events = 0

    def as_ref(self, x):
        if isinstance(x, NodeRef):
            if x.graph is not self:
                raise ValueError("node belongs to a different graph")
            return x
        return self.constant(x)

    def input(self, name, value, requires_grad=False):
        if name in self.inputs:
            raise ValueError(f"duplicate input name: {name}")
        value = np.asarray(value, dtype=np.float64)
        node = Node("input", (), {}, value, bool(requires_grad), name=name)
        self.nodes.append(node)
        self.inputs[name] = len(self.nodes) - 1
        return NodeRef(self, len(self.nodes) - 1)

    def constant(self, value):
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node("const", (), {}, value, False))
        return NodeRef(self, len(self.nodes) - 1)

    def apply(self, op, inputs, **params):
        if op not in _FORWARD:
            raise ValueError(f"unknown primitive: {op}")
        refs = tuple(self.as_ref(x) for x in inputs)
        arrs = [self.nodes[r.idx].value for r in refs]
        value = _FORWARD[op](self, params, *arrs)
        if op == "stop_gradient":
            requires = False
        else:
            requires = any(self.nodes[r.idx].requires for r in refs)
        self.nodes.append(Node(op, tuple(r.idx for r in refs), params, value, requires))
        return NodeRef(self, len(self.nodes) - 1)

    def mark_output(self, name, ref):
        self.outputs[name] = self.as_ref(ref).idx
        return ref

    def bind(self, inputs):
        for name, t in inputs.items():
            if name not in self.inputs:
                raise KeyError(f"unknown graph input: {name}")
            node = self.nodes[self.inputs[name]]
            data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            if data.shape != node.value.shape:
                raise ValueError(
                    f"input {name!r} expects shape {node.value.shape}, got {data.shape}"
                )
            node.value = data.astype(np.float64, copy=False)

    def recompute(self, check_finite=True):
        self.clamp_events = 0
        for idx, node in enumerate(self.nodes):
            if node.op in ("input", "const"):
                continue
            arrs = [self.nodes[i].value for i in node.inputs]
            node.value = _FORWARD[node.op](self, node.params, *arrs)
            if check_finite and not np.all(np.isfinite(node.value)):
                label = f"node {idx} ({node.op})"
                raise ArithmeticError(f"non-finite values in {label}")

    def backward(self, seed):
        seed_idx = self._resolve(seed)
        nodes = self.nodes
        if nodes[seed_idx].value.size != 1:
            raise ValueError("gradient seed must be a scalar output")
        for node in nodes:
            node.grad = None
        nodes[seed_idx].grad = np.ones_like(nodes[seed_idx].value)
        for idx in range(seed_idx, -1, -1):
            node = nodes[idx]
            if node.grad is None or not node.requires:
                continue
            if node.op in ("input", "const"):
                continue
            ins = [nodes[i].value for i in node.inputs]
            grads = _BACKWARD[node.op](node.params, node.value, ins, node.grad)
            for i, gi in zip(node.inputs, grads):
                if gi is None or not nodes[i].requires:
                    continue
                if nodes[i].grad is None:
                    nodes[i].grad = np.zeros_like(nodes[i].value)
                nodes[i].grad += gi

    def _resolve(self, seed):
        if isinstance(seed, NodeRef):
            return seed.idx
        if seed in self.outputs:
            return self.outputs[seed]
        if seed in self.inputs:
            return self.inputs[seed]
        raise KeyError(f"unknown output: {seed}")


def evaluate(graph, inputs=None):
    """Run the graph forward and return its marked outputs as Tensors."""
    if inputs:
        graph.bind(inputs)
    graph.recompute()
    return {name: Tensor(graph.nodes[i].value) for name, i in graph.outputs.items()}


def gradient(graph, inputs=None, seed=None):
    """Return d(seed)/d(input) for every requires_grad input, by name."""
    if seed is None:
        raise ValueError("gradient needs a seed output")
    if inputs:
        graph.bind(inputs)
        graph.recompute()
    graph.backward(seed)
    out = {}
    for name, idx in graph.inputs.items():
        node = graph.nodes[idx]
        if not node.requires:
            continue
        g = node.grad if node.grad is not None else np.zeros_like(node.value)
        if not np.all(np.isfinite(g)):
            raise ArithmeticError(f"non-finite gradient for input {name!r}")
        out[name] = Tensor(g)
    return out
