"""Layer primitives on NHWC arrays with explicit backward passes.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x, w, b, stride=1, pad=0):
    """x: (N, H, W, C); w: (F, C, kh, kw); b: (F,)."""
    n, h, wd, c = x.shape
    f, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"conv expects {c2} input channels, got {c}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(n * ho * wo, c * kh * kw)
    wm = w.reshape(f, -1)
    out = (cols @ wm.T + b).reshape(n, ho, wo, f)
    return out, (xp.shape, cols, w, stride, pad, ho, wo)


def conv_backward(dout, cache):
    xp_shape, cols, w, stride, pad, ho, wo = cache
    n, hp, wp, c = xp_shape
    f, _, kh, kw = w.shape
    d2 = dout.reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[..., i, j]
    dx = dxp[:, pad:hp - pad, pad:wp - pad, :] if pad else dxp
    return dx, dw, db


def maxpool_forward(x, size=3, stride=2):
    n, h, w, c = x.shape
    win = sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    flat = win.reshape(n, ho, wo, c, size * size)
    arg = np.argmax(flat, axis=-1)  # first maximum wins ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, size, stride)


def maxpool_backward(dout, cache):
    shape, arg, size, stride = cache
    n, ho, wo, c = dout.shape
    dx = np.zeros(shape, dtype=dout.dtype)
    for k in range(size * size):
        i, j = divmod(k, size)
        hit = arg == k
        if hit.any():
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += np.where(hit, dout, 0)
    return dx


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def fc_forward(x, w, b):
    """x: (N, D); w: (out, D)."""
    return x @ w.T + b, x


def fc_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1
