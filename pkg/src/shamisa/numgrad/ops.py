"""Functional spellings of the graph primitives."""


def _g(x):
    return x.graph


def add(a, b):
    return _g(a).apply("add", (a, b))


def subtract(a, b):
    return _g(a).apply("subtract", (a, b))


def multiply(a, b):
    return _g(a).apply("multiply", (a, b))


def scalar_multiply(a, c):
    return _g(a).apply("scalar_multiply", (a,), c=float(c))


def matmul(a, b, transpose_a=False, transpose_b=False):
    return _g(a).apply(
        "matmul", (a, b), transpose_a=bool(transpose_a), transpose_b=bool(transpose_b)
    )


def conv2d(x, w, stride=1, padding=0):
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    return _g(x).apply("conv2d", (x, w), stride=int(stride), padding=int(padding))


def relu(x):
    return _g(x).apply("relu", (x,))


def exp(x):
    return _g(x).apply("exp", (x,))


def log(x, clamp_min=None):
    cm = None if clamp_min is None else float(clamp_min)
    return _g(x).apply("log", (x,), clamp_min=cm)


def sqrt(x):
    return _g(x).apply("sqrt", (x,))


def square(x):
    return _g(x).apply("square", (x,))


def sum(x, axis=None, keepdims=False):
    return _g(x).apply("sum", (x,), axis=axis, keepdims=bool(keepdims))


def mean(x, axis=None, keepdims=False):
    return _g(x).apply("mean", (x,), axis=axis, keepdims=bool(keepdims))


def row_softmax(x):
    return _g(x).apply("row_softmax", (x,))


def global_average_pool(x):
    return _g(x).apply("global_average_pool", (x,))


def pairwise_sqdist(z):
    return _g(z).apply("pairwise_sqdist", (z,))


def stop_gradient(x):
    return _g(x).apply("stop_gradient", (x,))
