"""Composition losses with analytic gradients.

Every loss takes rasters shaped ``(..., H, W)`` and returns
``(value, grad)`` where ``value`` has the leading shape and ``grad`` is
the derivative of each sample's value w.r.t. ``S``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..raster import EPS

__all__ = [
    "LossWeights",
    "loss_pixel",
    "loss_overlap",
    "loss_centroid",
    "loss_inertia",
    "loss_total",
]


def _check(s, c=None):
    s = np.asarray(s)
    if c is not None:
        c = np.asarray(c)
        if s.shape != c.shape:
            raise ValueError(f"shape mismatch: {s.shape} vs {c.shape}")
    return s, c


def _coords(shape, dtype):
    h, w = shape[-2:]
    return np.arange(w, dtype=dtype)[None, :], np.arange(h, dtype=dtype)[:, None]


def _sum(a):
    return np.sum(a, axis=(-2, -1))


def _expand(a):
    return np.asarray(a)[..., None, None]


def loss_pixel(s, c):
    """Mean absolute difference; subgradient 0 where ``S == C``."""
    s, c = _check(s, c)
    n = s.shape[-1] * s.shape[-2]
    diff = s - c
    return _sum(np.abs(diff)) / n, np.sign(diff) / n


def loss_overlap(s):
    """Share of the summed mass lying above 1 (capped at 1 per pixel).

    An all-zero ``S`` gives 0 with a zero gradient.
    """
    s, _ = _check(s)
    excess = np.clip(s - 1.0, 0.0, 1.0)
    num = _sum(excess)
    den = _sum(s)
    safe = np.where(den > 0, den, 1.0)
    value = np.where(den > 0, num / safe, 0.0)
    active = ((s > 1.0) & (s < 2.0)).astype(s.dtype)
    grad = active / _expand(safe) - _expand(num / safe / safe)
    grad = np.where(_expand(den > 0), grad, 0.0)
    return value, grad


def _moments(img, x, y):
    m00 = _sum(img) + EPS
    m10 = _sum(img * x)
    m01 = _sum(img * y)
    return m00, m10, m01


def loss_centroid(s, c):
    """Half the L1 distance between the two centroids, in pixels."""
    s, c = _check(s, c)
    x, y = _coords(s.shape, s.dtype)
    m00, m10, m01 = _moments(s, x, y)
    c00, c10, c01 = _moments(c, x, y)
    cx, cy = m10 / m00, m01 / m00
    dx = cx - c10 / c00
    dy = cy - c01 / c00
    value = 0.5 * (np.abs(dx) + np.abs(dy))
    grad = 0.5 * (
        _expand(np.sign(dx)) * (x - _expand(cx)) + _expand(np.sign(dy)) * (y - _expand(cy))
    ) / _expand(m00)
    return value, grad


def _inertia(img, x, y):
    m00, m10, m01 = _moments(img, x, y)
    m20 = _sum(img * x * x)
    m02 = _sum(img * y * y)
    return m20 - m10**2 / m00 + m02 - m01**2 / m00, (m00, m10, m01)


def loss_inertia(s, c):
    """Absolute difference of the inertia (second central moments)."""
    s, c = _check(s, c)
    x, y = _coords(s.shape, s.dtype)
    psi_s, (m00, m10, m01) = _inertia(s, x, y)
    psi_c, _ = _inertia(c, x, y)
    m00, m10, m01 = _expand(m00), _expand(m10), _expand(m01)
    dpsi = x * x - 2 * m10 * x / m00 + (m10 / m00) ** 2 + y * y - 2 * m01 * y / m00 + (m01 / m00) ** 2
    return np.abs(psi_s - psi_c), _expand(np.sign(psi_s - psi_c)) * dpsi


@dataclass(frozen=True)
class LossWeights:
    pixel: float = 1.0
    overlap: float = 0.0
    centroid: float = 0.0
    inertia: float = 0.0

    def __post_init__(self):
        vals = (self.pixel, self.overlap, self.centroid, self.inertia)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")

    def rescaled(self, size: int, reference: int = 256) -> "LossWeights":
        """Weights for training at ``size`` px given values tuned at ``reference``.

        The centroid term grows linearly with resolution and inertia with
        its fourth power.
        """
        r = reference / size
        return LossWeights(self.pixel, self.overlap, self.centroid * r, self.inertia * r**4)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.pixel, self.overlap, self.centroid, self.inertia)


def loss_total(s, c, weights: LossWeights) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
    """Weighted sum of the four terms.

    Returns ``(value, grad, terms)`` with the unweighted term values.
    Terms with zero weight are skipped.
    """
    s, c = _check(s, c)
    value = np.zeros(s.shape[:-2], dtype=s.dtype)
    grad = np.zeros_like(s)
    terms = {}
    parts = (
        ("pixel", weights.pixel, lambda: loss_pixel(s, c)),
        ("overlap", weights.overlap, lambda: loss_overlap(s)),
        ("centroid", weights.centroid, lambda: loss_centroid(s, c)),
        ("inertia", weights.inertia, lambda: loss_inertia(s, c)),
    )
    for name, w, fn in parts:
        if w == 0:
            continue
        v, g = fn()
        terms[name] = v
        value = value + w * v
        grad = grad + w * g
    return value, grad, terms
