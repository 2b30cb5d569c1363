"""Pure-NumPy convolution kernels (im2col + BLAS)."""

import numpy as np


def out_extent(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _windows(xp, kh, kw, stride, ho, wo):
    n, cin = xp.shape[0], xp.shape[1]
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        (n, cin, ho, wo, kh, kw),
        (s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )


def conv2d_forward(x, w, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = out_extent(h, kh, stride, padding)
    wo = out_extent(wd, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grad_input(dy, w, h, wd, stride, padding):
    n, cout, ho, wo = dy.shape
    _, cin, kh, kw = w.shape
    dxp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    t = np.tensordot(dy, w, axes=([1], [0]))  # (n, ho, wo, cin, kh, kw)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += (
                t[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            )
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding:-padding, padding:-padding])
    return dxp


def conv2d_grad_weight(x, dy, kh, kw, stride, padding):
    n, cin, h, wd = x.shape
    ho, wo = dy.shape[2], dy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, kh, kw, stride, ho, wo)
    return np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
