"""Feature fusion between one component's features and another's.

All functions take feature maps shaped ``(..., C, h, w)``; ``self`` comes
first, the other component second.
"""

from __future__ import annotations

import numpy as np

from ..diffops.nn import dense, dense_backward, softmax, softmax_backward

ADAIN_EPS = 1e-5


def fuse_stack(f_self, f_other):
    f_self, f_other = np.asarray(f_self), np.asarray(f_other)
    if f_self.shape != f_other.shape:
        raise ValueError(f"fuse_stack: shape mismatch {f_self.shape} vs {f_other.shape}")
    return np.concatenate([f_self, f_other], axis=-3)


def _stats(f):
    m = f.shape[-1] * f.shape[-2]
    mu = f.mean(axis=(-2, -1), keepdims=True)
    centered = f - mu
    sigma = np.sqrt(np.sum(centered * centered, axis=(-2, -1), keepdims=True) / m)
    return mu, centered, sigma, m


def fuse_adain(f_self, f_other):
    """Re-style ``f_self`` with the per-channel mean and std of ``f_other``."""
    f_self, f_other = np.asarray(f_self), np.asarray(f_other)
    if f_self.shape != f_other.shape:
        raise ValueError(f"fuse_adain: shape mismatch {f_self.shape} vs {f_other.shape}")
    _, a, s_self, m = _stats(f_self)
    mu_o, b, s_other, _ = _stats(f_other)
    d = s_self + ADAIN_EPS
    norm = a / d
    y = s_other * norm + mu_o
    return y, (a, b, s_self, s_other, d, norm, m)


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def fuse_adain_backward(dy, cache):
    a, b, s_self, s_other, d, norm, m = cache
    d_sother = np.sum(dy * norm, axis=(-2, -1), keepdims=True)
    d_muo = np.sum(dy, axis=(-2, -1), keepdims=True)
    dnorm = dy * s_other
    da = dnorm / d
    dd = -np.sum(dnorm * a, axis=(-2, -1), keepdims=True) / d**2
    d_self = da - da.mean(axis=(-2, -1), keepdims=True) + dd * _safe_div(a, m * s_self)
    d_other = d_muo / m + d_sother * _safe_div(b, m * s_other)
    return d_self, d_other


def _tokens(f):
    # (..., C, h, w) -> (..., h*w, C)
    return np.swapaxes(f.reshape(f.shape[:-2] + (-1,)), -1, -2)


def fuse_attention(f_self, f_other, wq, bq, wk, bk, wv, bv):
    """Cross attention: queries from ``f_self``, keys and values from ``f_other``.

    Returns a map with ``wv.shape[1]`` channels and the input's spatial size.
    """
    f_self, f_other = np.asarray(f_self), np.asarray(f_other)
    if f_self.shape != f_other.shape:
        raise ValueError(f"fuse_attention: shape mismatch {f_self.shape} vs {f_other.shape}")
    xs, xo = _tokens(f_self), _tokens(f_other)
    q, cq = dense(xs, wq, bq)
    k, ck = dense(xo, wk, bk)
    v, cv = dense(xo, wv, bv)
    scale = 1.0 / np.sqrt(wq.shape[1])
    att, csm = softmax(q @ np.swapaxes(k, -1, -2) * scale, axis=-1)
    out = att @ v
    h, w = f_self.shape[-2:]
    y = np.swapaxes(out, -1, -2).reshape(f_self.shape[:-3] + (wv.shape[1], h, w))
    return y, (q, k, v, att, scale, cq, ck, cv, csm, f_self.shape)


def fuse_attention_backward(dy, cache):
    """Returns ``(d_self, d_other, dwq, dbq, dwk, dbk, dwv, dbv)``."""
    q, k, v, att, scale, cq, ck, cv, csm, shape = cache
    dout = _tokens(dy)
    datt = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(att, -1, -2) @ dout
    (dlogits,) = softmax_backward(datt, csm)
    dlogits = dlogits * scale
    dq = dlogits @ k
    dk = np.swapaxes(dlogits, -1, -2) @ q
    dxs, dwq, dbq = dense_backward(dq, cq)
    dxo_k, dwk, dbk = dense_backward(dk, ck)
    dxo_v, dwv, dbv = dense_backward(dv, cv)

    def untoken(t):
        return np.swapaxes(t, -1, -2).reshape(shape)

    return untoken(dxs), untoken(dxo_k + dxo_v), dwq, dbq, dwk, dbk, dwv, dbv
