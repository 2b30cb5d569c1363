"""Compare the compiled and pure-NumPy convolution kernels.

Runs the forward pass and both backward passes of every conv layer
shape used by the default encoder, plus a full encode over a batch,
and prints mean +/- std wall time per call for each backend.

Usage: python3 benchmarks/benchmark_kernels.py [--repeats N] [--batch N]
"""

import argparse
import time

import numpy as np

from shamisa._kernels import conv_numpy, out_extent

try:
    from shamisa._kernels import conv_numba
except ImportError:
    conv_numba = None


def _layer_shapes(blocks=(16, 32, 64, 128), size=64, batch=16):
    """(x_shape, w_shape) per conv layer of the default encoder."""
    shapes = []
    cin, s = 3, size
    for cout in blocks:
        shapes.append(((batch, cin, s, s), (cout, cin, 3, 3)))
        cin, s = cout, out_extent(s, 3, 2, 1)
    return shapes


def _time(fn, repeats, warmup=2):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return np.mean(samples), np.std(samples)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--batch", type=int, default=16)
    args = ap.parse_args()

    backends = [("numpy", conv_numpy)]
    if conv_numba is not None:
        backends.append(("numba", conv_numba))
    else:
        print("numba unavailable; timing the numpy backend only")

    rng = np.random.default_rng(0)
    rows = []
    for xs, ws in _layer_shapes(batch=args.batch):
        x = rng.normal(size=xs)
        w = rng.normal(size=ws)
        ho = out_extent(xs[2], 3, 2, 1)
        dy = rng.normal(size=(xs[0], ws[0], ho, ho))
        for op, make in (
            ("forward", lambda m: (lambda: m.conv2d_forward(x, w, 2, 1))),
            ("grad_in", lambda m: (lambda: m.conv2d_grad_input(dy, w, xs[2], xs[3], 2, 1))),
            ("grad_w", lambda m: (lambda: m.conv2d_grad_weight(x, dy, 3, 3, 2, 1))),
        ):
            times = {}
            for name, mod in backends:
                mean, std = _time(make(mod), args.repeats)
                times[name] = (mean, std)
            rows.append((f"{xs[1]:3d}->{ws[0]:3d} @{xs[2]:3d}px {op}", times))

    width = max(len(r[0]) for r in rows)
    header = f"{'layer/op':<{width}}"
    for name, _ in backends:
        header += f"  {name + ' (ms)':>18}"
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    for label, times in rows:
        line = f"{label:<{width}}"
        for name, _ in backends:
            mean, std = times[name]
            line += f"  {mean * 1e3:9.3f}+/-{std * 1e3:6.3f}"
        if len(backends) == 2:
            line += f"  {times['numpy'][0] / times['numba'][0]:7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
