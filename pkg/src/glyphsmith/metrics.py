"""Pixel-level reconstruction metrics for composed characters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .diffops.warp import warp_forward
from .vector import RenderFrame, grid_to_content_affine


def _pair(s, c):
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)
    c = np.asarray(c, dtype=np.float64)
    if s.shape != c.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {c.shape}")
    return s, c


def mae(s, c) -> float:
    s, c = _pair(s, c)
    return float(np.mean(np.abs(s - c)))


def rmse(s, c) -> float:
    s, c = _pair(s, c)
    return float(np.sqrt(np.mean((s - c) ** 2)))


@dataclass
class EvalReport:
    mae: List[float]
    rmse: List[float]
    baseline_mae: List[float]
    baseline_rmse: List[float]
    corner_px: List[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.mae)

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.mae))

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse))

    @property
    def mean_baseline_mae(self) -> float:
        return float(np.mean(self.baseline_mae))

    @property
    def mean_baseline_rmse(self) -> float:
        return float(np.mean(self.baseline_rmse))

    @property
    def mean_corner_px(self) -> Optional[float]:
        return float(np.mean(self.corner_px)) if self.corner_px else None

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mae": self.mean_mae,
            "rmse": self.mean_rmse,
            "baseline_mae": self.mean_baseline_mae,
            "baseline_rmse": self.mean_baseline_rmse,
            "corner_px": self.mean_corner_px,
            "per_sample": [
                {"mae": a, "rmse": b} for a, b in zip(self.mae, self.rmse)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"samples       {self.count}",
            f"MAE           {self.mean_mae:.6f}",
            f"RMSE          {self.mean_rmse:.6f}",
            f"baseline MAE  {self.mean_baseline_mae:.6f}",
            f"baseline RMSE {self.mean_baseline_rmse:.6f}",
        ]
        if self.corner_px:
            lines.append(f"corner px     {self.mean_corner_px:.4f}")
        return "\n".join(lines)


def em_corners(units_per_em: float) -> np.ndarray:
    u = float(units_per_em)
    return np.array([[0.0, 0.0, 1.0], [u, 0.0, 1.0], [0.0, u, 1.0], [u, u, 1.0]]).T


def corner_displacement(theta_pred, theta_true, size: int, units_per_em: int = 1000) -> float:
    """Mean distance in pixels between em-box corners moved by two sampling affines.

    Both affines act on a centered component render; the corners are those
    of that render's em box.
    """
    frame = RenderFrame(size, units_per_em)
    corners = em_corners(units_per_em)
    a = grid_to_content_affine(theta_pred, frame) @ corners
    b = grid_to_content_affine(theta_true, frame) @ corners
    return float(np.mean(np.hypot(*(a[:2] - b[:2]))) * frame.px_per_unit)


def _compose(thetas, comps):
    n, k, h, w = comps.shape
    return warp_forward(comps.reshape(n * k, h, w), thetas.reshape(n * k, 2, 3)).reshape(n, k, h, w).sum(axis=1)


def evaluate(model, samples: Sequence, batch_size: int = 64) -> EvalReport:
    """MAE/RMSE of the model's compositions, plus the identity baseline.

    Samples need ``components`` and ``target``; when they also carry ground
    truth (``thetas()``), the mean corner displacement is reported.
    """
    if len(samples) == 0:
        raise ValueError("empty evaluation set")
    report = EvalReport([], [], [], [])
    size = model.config.input_size
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        comps = np.stack([np.asarray(s.components, dtype=np.float64) for s in chunk])
        targets = np.stack([np.asarray(s.target, dtype=np.float64) for s in chunk])
        thetas = model.predict(comps)
        composed = _compose(thetas, comps)
        ident = comps.sum(axis=1)
        for i, s in enumerate(chunk):
            report.mae.append(mae(composed[i], targets[i]))
            report.rmse.append(rmse(composed[i], targets[i]))
            report.baseline_mae.append(mae(ident[i], targets[i]))
            report.baseline_rmse.append(rmse(ident[i], targets[i]))
            truth = s.thetas() if hasattr(s, "thetas") else None
            if truth is not None:
                report.corner_px.append(
                    float(np.mean([corner_displacement(p, t, size) for p, t in zip(thetas[i], truth)]))
                )
    return report
