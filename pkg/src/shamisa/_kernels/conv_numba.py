"""Numba-compiled convolution kernels (im2col packing + BLAS matmul).

The padding/stride bookkeeping runs in jitted packing loops that lower each
convolution to one dense matmul; ``np.dot`` inside an ``@njit`` function is
dispatched to BLAS, so the arithmetic runs at GEMM speed while the packing
itself never allocates Python objects.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _im2col(x, kh, kw, stride, padding, ho, wo):
    n, cin, h, wd = x.shape
    cols = np.zeros((n * ho * wo, cin * kh * kw))
    for b in range(n):
        for i in range(ho):
            r0 = i * stride - padding
            for j in range(wo):
                c0 = j * stride - padding
                row = (b * ho + i) * wo + j
                for ci in range(cin):
                    for u in range(kh):
                        r = r0 + u
                        if r < 0 or r >= h:
                            continue
                        base = (ci * kh + u) * kw
                        xrow = x[b, ci, r]
                        for v in range(kw):
                            c = c0 + v
                            if 0 <= c < wd:
                                cols[row, base + v] = xrow[c]
    return cols


@njit(cache=True)
def conv2d_forward(x, w, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, padding, ho, wo)
    wt = np.empty((cin * kh * kw, cout))
    for co in range(cout):
        k = 0
        for ci in range(cin):
            for u in range(kh):
                for v in range(kw):
                    wt[k, co] = w[co, ci, u, v]
                    k += 1
    flat = np.dot(cols, wt)
    out = np.empty((n, cout, ho, wo))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                for co in range(cout):
                    out[b, co, i, j] = flat[row, co]
    return out


@njit(cache=True)
def conv2d_grad_input(dy, w, h, wd, stride, padding):
    n, cout, ho, wo = dy.shape
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    dmat = np.empty((n * ho * wo, cout))
    for b in range(n):
        for co in range(cout):
            for i in range(ho):
                row0 = (b * ho + i) * wo
                drow = dy[b, co, i]
                for j in range(wo):
                    dmat[row0 + j, co] = drow[j]
    wmat = np.empty((cout, cin * kh * kw))
    for co in range(cout):
        k = 0
        for ci in range(cin):
            for u in range(kh):
                for v in range(kw):
                    wmat[co, k] = w[co, ci, u, v]
                    k += 1
    dcols = np.dot(dmat, wmat)
    dx = np.zeros((n, cin, h, wd))
    for b in range(n):
        for i in range(ho):
            r0 = i * stride - padding
            for j in range(wo):
                c0 = j * stride - padding
                row = (b * ho + i) * wo + j
                for ci in range(cin):
                    for u in range(kh):
                        r = r0 + u
                        if r < 0 or r >= h:
                            continue
                        base = (ci * kh + u) * kw
                        dxrow = dx[b, ci, r]
                        for v in range(kw):
                            c = c0 + v
                            if 0 <= c < wd:
                                dxrow[c] += dcols[row, base + v]
    return dx


@njit(cache=True)
def conv2d_grad_weight(x, dy, kh, kw, stride, padding):
    n, cin, h, wd = x.shape
    cout, ho, wo = dy.shape[1], dy.shape[2], dy.shape[3]
    cols = _im2col(x, kh, kw, stride, padding, ho, wo)
    dmat = np.empty((cout, n * ho * wo))
    for b in range(n):
        for co in range(cout):
            for i in range(ho):
                row0 = (b * ho + i) * wo
                drow = dy[b, co, i]
                for j in range(wo):
                    dmat[co, row0 + j] = drow[j]
    flat = np.dot(dmat, cols)
    dw = np.empty((cout, cin, kh, kw))
    for co in range(cout):
        k = 0
        for ci in range(cin):
            for u in range(kh):
                for v in range(kw):
                    dw[co, ci, u, v] = flat[co, k]
                    k += 1
    return dw
