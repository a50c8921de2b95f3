"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np


def numeric_grad(fn: Callable[[], float], x: np.ndarray, h: float = 1e-5, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. ``x``, perturbing ``x`` in place.

    Entries where ``mask`` is False are skipped and left as NaN.
    """
    grad = np.full(x.shape, np.nan)
    flat = x.reshape(-1)
    check = np.ones(x.size, dtype=bool) if mask is None else np.asarray(mask).reshape(-1)
    for i in np.flatnonzero(check):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2 * h)
    return grad


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    checked: int
    excluded: int
    passed: bool


@dataclass
class GradReport:
    label: str
    tol: float
    params: Dict[str, ParamCheck] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params.values())

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params.values()), default=0.0)

    @property
    def excluded(self) -> int:
        return sum(p.excluded for p in self.params.values())

    def lines(self):
        for p in self.params.values():
            status = "PASS" if p.passed else "FAIL"
            yield (
                f"{status} {self.label} {p.name} max_rel_err={p.max_rel_error:.3e} "
                f"tol={self.tol:.0e} checked={p.checked} excluded={p.excluded}"
            )


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation relative to the largest gradient entry."""
    a = np.asarray(analytic, dtype=float).reshape(-1)
    n = np.asarray(numeric, dtype=float).reshape(-1)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    diff = np.max(np.abs(a - n), initial=0.0)
    if scale < 1e-12:
        return float(diff)
    return float(diff / scale)


def grad_check(
    fn: Callable[[], float],
    inputs: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-5,
    exclude: Optional[Mapping[str, np.ndarray]] = None,
    label: str = "",
    max_samples: Optional[int] = None,
    seed: int = 0,
) -> GradReport:
    """Compare analytic gradients against central differences.

    ``fn`` evaluates the scalar objective reading the arrays in ``inputs``,
    which are perturbed in place.  ``exclude`` masks (True = skip) mark
    samples sitting next to kinks; they are counted but not compared.
    Large tensors can be spot-checked on ``max_samples`` random entries.
    """
    report = GradReport(label, tol)
    rng = np.random.default_rng(seed)
    for name, x in inputs.items():
        skip = np.zeros(x.shape, dtype=bool) if not exclude or name not in exclude else np.asarray(exclude[name], bool)
        keep = ~skip.reshape(-1)
        if max_samples is not None and keep.sum() > max_samples:
            chosen = rng.choice(np.flatnonzero(keep), size=max_samples, replace=False)
            keep = np.zeros_like(keep)
            keep[chosen] = True
        num = numeric_grad(fn, x, h, keep.reshape(x.shape))
        err = relative_error(np.asarray(analytic[name]).reshape(-1)[keep], num.reshape(-1)[keep])
        report.params[name] = ParamCheck(name, err, int(keep.sum()), int(skip.sum()), err <= tol)
    return report
