"""Neural network primitives with hand-written backward passes.

Each forward returns ``(y, cache)``; the matching ``*_backward(dy, cache)``
returns gradients for the forward's array arguments in order.  Feature
maps are ``(N, C, H, W)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

GN_EPS = 1e-5


def dense(x, w, b):
    """``y = x @ w + b`` with ``w`` shaped ``(in, out)``."""
    x = np.asarray(x)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def _im2col(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv3x3(x, k, b):
    """Stride-1, zero-padded 3x3 convolution; ``k`` is ``(out, in, 3, 3)``."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ValueError(f"conv3x3: input {x.shape} incompatible with kernel {k.shape}")
    n, _, h, w = x.shape
    cols = _im2col(x)
    y = cols @ k.reshape(k.shape[0], -1).T + b
    y = y.reshape(n, h, w, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (x.shape, cols, k)


def conv3x3_backward(dy, cache):
    shape, cols, k = cache
    n, c, h, w = shape
    o = k.shape[0]
    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, o)
    dk = (dy2.T @ cols).reshape(k.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ k.reshape(o, -1)).reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dk, db


def groupnorm(x, scale, shift, groups: int = 8, eps: float = GN_EPS):
    x = np.asarray(x)
    n, c, h, w = x.shape
    if c % groups:
        raise ValueError(f"groupnorm: {c} channels not divisible into {groups} groups")
    xg = x.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    y = xhat * scale[None, :, None, None] + shift[None, :, None, None]
    return y, (xhat, inv, scale, groups)


def groupnorm_backward(dy, cache):
    xhat, inv, scale, groups = cache
    n, c, h, w = xhat.shape
    dscale = np.sum(dy * xhat, axis=(0, 2, 3))
    dshift = np.sum(dy, axis=(0, 2, 3))
    dxhat = (dy * scale[None, :, None, None]).reshape(n, groups, -1)
    xh = xhat.reshape(n, groups, -1)
    m = xh.shape[2]
    dx = inv / m * (m * dxhat - dxhat.sum(axis=2, keepdims=True) - xh * np.sum(dxhat * xh, axis=2, keepdims=True))
    return dx.reshape(xhat.shape), dscale, dshift


def relu(x):
    x = np.asarray(x)
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(dy, mask):
    return (np.where(mask, dy, 0).astype(dy.dtype, copy=False),)


def maxpool2(x):
    x = np.asarray(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2 needs even spatial extents")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, idx)


def maxpool2_backward(dy, cache):
    shape, idx = cache
    n, c, h, w = shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
    dx = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
    return (dx,)


def softmax(x, axis: int = -1):
    x = np.asarray(x)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return y, (y, axis)


def softmax_backward(dy, cache):
    y, axis = cache
    return (y * (dy - np.sum(dy * y, axis=axis, keepdims=True)),)
