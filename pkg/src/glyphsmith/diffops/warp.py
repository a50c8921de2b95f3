"""Affine grid sampling with bilinear interpolation and zero padding.

Normalized coordinates follow the half-pixel convention: column ``j`` of a
width-``W`` image sits at ``(2j + 1) / W - 1``.  ``theta`` maps output
locations to source locations, ``[s_x, k_x, t_x; k_y, s_y, t_y]``.

Source positions are computed directly in pixel units so the identity
matrix lands exactly on pixel centers (a bitwise copy).
"""

from __future__ import annotations

from typing import NamedTuple, Tuple

import numpy as np


class _Grid(NamedTuple):
    x0: np.ndarray
    y0: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    u: np.ndarray
    v: np.ndarray


def _as_batch(image, theta):
    image = np.asarray(image)
    theta = np.asarray(theta, dtype=image.dtype if image.dtype.kind == "f" else float)
    single = image.ndim == 2
    if single:
        image = image[None]
    theta = theta.reshape(-1, 2, 3)
    if theta.shape[0] != image.shape[0]:
        raise ValueError("one theta per image required")
    return image, theta, single


def _grid(theta: np.ndarray, h: int, w: int) -> _Grid:
    u = np.arange(w, dtype=theta.dtype) - (w - 1) / 2.0
    v = np.arange(h, dtype=theta.dtype) - (h - 1) / 2.0
    t = theta[:, :, :, None, None]
    uu = u[None, None, :]
    vv = v[None, :, None]
    px = t[:, 0, 0] * uu + t[:, 0, 1] * (w / h) * vv + (w / 2.0) * t[:, 0, 2] + (w - 1) / 2.0
    py = t[:, 1, 0] * (h / w) * uu + t[:, 1, 1] * vv + (h / 2.0) * t[:, 1, 2] + (h - 1) / 2.0
    x0 = np.floor(px)
    y0 = np.floor(py)
    return _Grid(x0.astype(np.int64), y0.astype(np.int64), px - x0, py - y0, u, v)


def _gather(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    n, h, w = image.shape
    valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    flat = np.where(valid, ys * w + xs, 0) + (np.arange(n) * h * w)[:, None, None]
    vals = image.reshape(-1)[flat]
    return np.where(valid, vals, 0), valid, flat


def warp_forward(image, theta) -> np.ndarray:
    """Resample ``image`` (``(H, W)`` or ``(N, H, W)``) through ``theta``."""
    img, th, single = _as_batch(image, theta)
    n, h, w = img.shape
    g = _grid(th, h, w)
    out = np.zeros_like(img, dtype=np.result_type(img, th))
    for dy, wy in ((0, 1 - g.wy), (1, g.wy)):
        for dx, wx in ((0, 1 - g.wx), (1, g.wx)):
            vals, _, _ = _gather(img, g.y0 + dy, g.x0 + dx)
            out += wy * wx * vals
    return out[0] if single else out


def warp_backward(image, theta, grad_out, need_image_grad: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss w.r.t. the image and ``theta``.

    Returns ``(d_image, d_theta)`` shaped like the inputs (``d_theta`` is
    ``(2, 3)`` or ``(N, 2, 3)``).
    """
    img, th, single = _as_batch(image, theta)
    gout = np.asarray(grad_out)
    if single:
        gout = gout[None]
    n, h, w = img.shape
    g = _grid(th, h, w)

    corners = {}
    for dy in (0, 1):
        for dx in (0, 1):
            corners[dy, dx] = _gather(img, g.y0 + dy, g.x0 + dx)
    v00, v01, v10, v11 = (corners[k][0] for k in ((0, 0), (0, 1), (1, 0), (1, 1)))

    d_px = gout * ((1 - g.wy) * (v01 - v00) + g.wy * (v11 - v10))
    d_py = gout * ((1 - g.wx) * (v10 - v00) + g.wx * (v11 - v01))
    uu = g.u[None, None, :]
    vv = g.v[None, :, None]
    d_theta = np.empty((n, 2, 3), dtype=np.result_type(gout, th))
    d_theta[:, 0, 0] = np.sum(d_px * uu, axis=(1, 2))
    d_theta[:, 0, 1] = np.sum(d_px * vv, axis=(1, 2)) * (w / h)
    d_theta[:, 0, 2] = np.sum(d_px, axis=(1, 2)) * (w / 2.0)
    d_theta[:, 1, 0] = np.sum(d_py * uu, axis=(1, 2)) * (h / w)
    d_theta[:, 1, 1] = np.sum(d_py * vv, axis=(1, 2))
    d_theta[:, 1, 2] = np.sum(d_py, axis=(1, 2)) * (h / 2.0)

    d_img = None
    if need_image_grad:
        acc = np.zeros(n * h * w, dtype=np.result_type(gout, img))
        for (dy, dx), (_, valid, flat) in corners.items():
            wy = g.wy if dy else 1 - g.wy
            wx = g.wx if dx else 1 - g.wx
            contrib = np.where(valid, gout * wy * wx, 0)
            acc += np.bincount(flat.reshape(-1), weights=contrib.reshape(-1), minlength=n * h * w)
        d_img = acc.reshape(n, h, w)
        if single:
            d_img = d_img[0]
    if single:
        d_theta = d_theta[0]
    return d_img, d_theta
