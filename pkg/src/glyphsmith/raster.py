"""Glyph rasterization and image moments.

Rasters are ``(H, W)`` float64 arrays indexed ``[row, column]``.  Moments
use 0-based column index for x and row index for y.
"""

from __future__ import annotations

import math
import re
from dataclasses import replace
from typing import List, NamedTuple, Tuple, Union

import numpy as np

from .vector import Cubic, Line, Quadratic, RenderFrame, VectorGlyph

EPS = 1e-6
SUPERSAMPLE = 4
FLATTEN_TOLERANCE_PX = 0.1


class Rendering(NamedTuple):
    image: np.ndarray
    frame: RenderFrame
    empty: bool


def _subdivisions(points_px: np.ndarray, degree: int) -> int:
    # Wang's bound on the number of chords for a given flatness
    second = points_px[:-2] - 2 * points_px[1:-1] + points_px[2:]
    m = float(np.max(np.hypot(second[:, 0], second[:, 1])))
    n = math.ceil(math.sqrt(degree * (degree - 1) / 8.0 * m / FLATTEN_TOLERANCE_PX))
    return max(n, 1)


def _flatten(glyph: VectorGlyph, to_px) -> List[np.ndarray]:
    """Closed polylines in pixel coordinates, one per contour."""
    polys = []
    for c in glyph.contours:
        pts = [to_px(np.array([c.start]))[0]]
        prev = pts[0]
        for seg in c.segments:
            if isinstance(seg, Line):
                p = to_px(np.array([seg.p1]))[0]
                pts.append(p)
                prev = p
                continue
            ctrl = to_px(np.array(list(seg)))
            cp = np.vstack([prev, ctrl])
            deg = len(cp) - 1
            n = _subdivisions(cp, deg)
            t = np.arange(1, n + 1)[:, None] / n
            u = 1 - t
            if isinstance(seg, Quadratic):
                curve = u * u * cp[0] + 2 * u * t * cp[1] + t * t * cp[2]
            else:
                curve = u**3 * cp[0] + 3 * u * u * t * cp[1] + 3 * u * t * t * cp[2] + t**3 * cp[3]
            curve[-1] = cp[-1]
            pts.extend(curve)
            prev = cp[-1]
        polys.append(np.asarray(pts))
    return polys


def coverage(polys: List[np.ndarray], width: int, height: int, ss: int = SUPERSAMPLE) -> np.ndarray:
    """Nonzero-winding coverage of polylines given in pixel units (y down).

    Each pixel is sampled on an ``ss x ss`` grid and box filtered.
    """
    sw, sh = width * ss, height * ss
    if not polys:
        return np.zeros((height, width))
    edges = np.concatenate([np.hstack([p[:-1], p[1:]]) for p in polys if len(p) > 1])
    x0, y0, x1, y1 = edges.T
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    direction = np.where(y1 > y0, 1, -1)
    ylo = np.minimum(y0, y1)
    yhi = np.maximum(y0, y1)
    # sample rows whose centers fall in [ylo, yhi)
    r0 = np.ceil(ylo * ss - 0.5).astype(np.int64)
    r1 = np.ceil(yhi * ss - 0.5).astype(np.int64)
    r0 = np.clip(r0, 0, sh)
    r1 = np.clip(r1, 0, sh)
    counts = r1 - r0
    total = int(counts.sum())
    winding = np.zeros((sh, sw + 1), dtype=np.int64)
    if total:
        eidx = np.repeat(np.arange(len(counts)), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        rows = r0[eidx] + offsets
        ys = (rows + 0.5) / ss
        t = (ys - y0[eidx]) / (y1[eidx] - y0[eidx])
        xs = x0[eidx] + t * (x1[eidx] - x0[eidx])
        # first sample column whose center lies right of the crossing
        cols = np.clip(np.ceil(xs * ss - 0.5), 0, sw).astype(np.int64)
        np.add.at(winding, (rows, cols), direction[eidx])
    inside = np.cumsum(winding[:, :sw], axis=1) != 0
    cov = inside.reshape(height, ss, width, ss).mean(axis=(1, 3))
    return cov


def render(glyph: VectorGlyph, frame: Union[RenderFrame, int], center: bool = False) -> Rendering:
    """Rasterize ``glyph`` with the em box filling the image.

    With ``center`` the glyph's tight bbox center is moved to the image
    center; the applied shift is stored in the returned frame.
    """
    if isinstance(frame, int):
        frame = RenderFrame(frame, glyph.units_per_em)
    if frame.units_per_em != glyph.units_per_em:
        frame = replace(frame, units_per_em=glyph.units_per_em)
    size = frame.size
    if glyph.empty:
        return Rendering(np.zeros((size, size)), replace(frame, dx=0.0, dy=0.0) if center else frame, True)
    if center:
        xmin, ymin, xmax, ymax = glyph.bbox()
        half = glyph.units_per_em / 2.0
        frame = replace(frame, dx=half - (xmin + xmax) / 2.0, dy=half - (ymin + ymax) / 2.0)
    k = frame.px_per_unit
    u = frame.units_per_em

    def to_px(p: np.ndarray) -> np.ndarray:
        return np.stack([(p[:, 0] + frame.dx) * k, (u - (p[:, 1] + frame.dy)) * k], axis=1)

    return Rendering(coverage(_flatten(glyph, to_px), size, size), frame, False)


def rasterize(glyph: VectorGlyph, frame: Union[RenderFrame, int]) -> np.ndarray:
    """Image of ``glyph`` in ``frame`` without re-centering."""
    return render(glyph, frame, center=False).image


# ---------------------------------------------------------------------------
# moments


def _grids(shape: Tuple[int, int]):
    h, w = shape
    return np.arange(w, dtype=float)[None, :], np.arange(h, dtype=float)[:, None]


def raw_moment(image: np.ndarray, i: int, j: int) -> np.ndarray:
    """Sum of ``I(x, y) * x**i * y**j`` over the last two axes."""
    if i < 0 or j < 0 or i + j > 2:
        raise ValueError("moment orders must satisfy 0 <= i + j <= 2")
    image = np.asarray(image, dtype=float)
    x, y = _grids(image.shape[-2:])
    return np.sum(image * (x**i) * (y**j), axis=(-2, -1))


def centroid(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    m00 = raw_moment(image, 0, 0) + EPS
    return raw_moment(image, 1, 0) / m00, raw_moment(image, 0, 1) / m00


def inertia(image: np.ndarray) -> np.ndarray:
    """Sum of the second-order central moments along both axes."""
    m00 = raw_moment(image, 0, 0) + EPS
    m10 = raw_moment(image, 1, 0)
    m01 = raw_moment(image, 0, 1)
    return raw_moment(image, 2, 0) - m10**2 / m00 + raw_moment(image, 0, 2) - m01**2 / m00


def iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    ma = np.asarray(a) >= threshold
    mb = np.asarray(b) >= threshold
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 1.0
    return np.count_nonzero(ma & mb) / union


# ---------------------------------------------------------------------------
# debug dumps


def to_pgm(image: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255); values clamped to [0, 1], rounded half up."""
    image = np.asarray(image, dtype=float)
    h, w = image.shape
    data = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(to_pgm(image))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    data = np.frombuffer(raw[m.end(): m.end() + w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(float) / maxval
