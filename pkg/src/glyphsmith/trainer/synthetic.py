"""Synthetic layout datasets with known ground-truth placements.

Components are random simple shapes.  In side by side layouts the first
slot (left or top) holds a tall, narrow convex polygon and later slots hold
wide, short clusters of stroke-like bars; an enclosure is built from bars
around a polygon.  Distinct families and extents let a model with shared
weights tell slots apart, the way radicals differ from the parts they sit
next to.

Placements are drawn from layout priors.  For side by side layouts the
scale along the split axis grows with a component's share of the total
ink, and the cross-axis scale shrinks tall components and stretches short
ones, so targets depend on what the images show rather than on noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from ..decomp import Layout, parse_layout
from ..raster import render, rasterize
from ..vector import (
    Contour,
    Line,
    RenderFrame,
    VectorGlyph,
    apply_affine,
    content_to_grid_affine,
    merge,
    scale,
    translate,
)

UNITS_PER_EM = 1000

# inner-component offsets (em fractions, y up) for the eight enclosure variations
ENCLOSURE_OFFSETS = (
    (0.0, 0.0),
    (0.0, -0.12),
    (0.12, 0.0),
    (0.0, 0.12),
    (-0.12, 0.0),
    (0.1, -0.1),
    (0.1, 0.1),
    (-0.1, -0.1),
)


# drawn component extents by slot: tall narrow leading parts, wide short followers
ROLE_WIDTHS = ((300.0, 450.0), (750.0, 950.0))
ROLE_HEIGHTS = ((800.0, 950.0), (500.0, 700.0))


@dataclass
class Sample:
    """One synthetic character.

    ``components`` are centered renders ``(K, H, W)``; ``frames`` record the
    centering shift of each render.  ``placements`` map each component
    glyph's own coordinates into the target em box.
    """

    layout: Layout
    components: np.ndarray
    target: np.ndarray
    glyphs: List[VectorGlyph]
    frames: List[RenderFrame]
    placements: List[np.ndarray]
    stored_thetas: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.target.shape[-1]

    def image_affines(self) -> List[np.ndarray]:
        """Ground truth as font-unit affines acting on the centered renders."""
        return [p @ np.linalg.inv(f.shift()) for p, f in zip(self.placements, self.frames)]

    def thetas(self) -> Optional[np.ndarray]:
        """Ground-truth sampling affines ``(K, 2, 3)``, if known."""
        if not self.placements:
            return self.stored_thetas
        out = RenderFrame(self.size, self.glyphs[0].units_per_em)
        return np.stack([content_to_grid_affine(m, out) for m in self.image_affines()])

    def composed_glyph(self) -> VectorGlyph:
        return merge([apply_affine(g, m) for g, m in zip(self.glyphs, self.placements)])


def _poly(points) -> Contour:
    pts = [tuple(map(float, p)) for p in points]
    return Contour(pts[0], [Line(p) for p in pts[1:]] + [Line(pts[0])])


def _stroke_shape(rng, w: float, h: float) -> List[Contour]:
    """Rectangular strokes inside a ``w x h`` box anchored at the origin."""
    contours = []
    n = int(rng.integers(2, 5))
    for i in range(n):
        t = rng.uniform(0.10, 0.16) * min(w, h)
        if i == 0 or rng.random() < 0.5:
            # horizontal bar spanning most of the width
            x0 = rng.uniform(0.0, 0.15) * w
            x1 = w - rng.uniform(0.0, 0.15) * w
            y = rng.uniform(0.0, h - t)
            box = (x0, y, x1, y + t)
        else:
            y0 = rng.uniform(0.0, 0.15) * h
            y1 = h - rng.uniform(0.0, 0.15) * h
            x = rng.uniform(0.0, w - t)
            box = (x, y0, x + t, y1)
        x0, y0, x1, y1 = box
        contours.append(_poly([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]))
    return contours


def _convex_shape(rng, w: float, h: float) -> List[Contour]:
    """One to three convex polygons; the first fills the box."""
    contours = []
    n = int(rng.integers(1, 4))
    for i in range(n):
        k = int(rng.integers(5, 9))
        # jittered even spacing keeps the hull round rather than a sliver
        ang = (np.arange(k) + rng.uniform(-0.3, 0.3, size=k)) * 2 * np.pi / k
        rad = rng.uniform(0.85, 1.0, size=k)
        if i == 0:
            cx, cy, rx, ry = w / 2, h / 2, 0.45 * w, 0.45 * h
        else:
            rx, ry = rng.uniform(0.15, 0.3) * w, rng.uniform(0.15, 0.3) * h
            cx, cy = rng.uniform(rx, w - rx), rng.uniform(ry, h - ry)
        pts = np.stack([cx + rx * rad * np.cos(ang), cy + ry * rad * np.sin(ang)], axis=1)
        contours.append(_poly(_hull(pts)))
    return contours


def _hull(pts: np.ndarray) -> np.ndarray:
    """Counter-clockwise convex hull (monotone chain)."""
    pts = sorted(map(tuple, pts))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def random_component(rng, role: int, w: float, h: float) -> VectorGlyph:
    """A component glyph somewhere in the em box, ``role`` 0 a polygon, else bars."""
    contours = _convex_shape(rng, w, h) if role == 0 else _stroke_shape(rng, w, h)
    glyph = VectorGlyph(UNITS_PER_EM, contours, float(UNITS_PER_EM))
    # arbitrary position; renders are centered anyway
    off = rng.uniform(0.0, UNITS_PER_EM - max(w, h), size=2)
    return apply_affine(glyph, translate(*off))


def _center(glyph: VectorGlyph):
    x0, y0, x1, y1 = glyph.bbox()
    return (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0


def _place(glyph: VectorGlyph, sx: float, sy: float, cx: float, cy: float) -> np.ndarray:
    gx, gy, _, _ = _center(glyph)
    return translate(cx, cy) @ scale(sx, sy) @ translate(-gx, -gy)


# priors ----------------------------------------------------------------------


def _split_scale(share: float, jitter: float) -> float:
    s = 0.40 + 0.20 * np.clip((share - 0.25) / 0.5, 0.0, 1.0) + jitter
    return float(np.clip(s, 0.40, 0.60))


def _cross_scale(extent: float) -> float:
    # extents run 600..950 units; short components are stretched more
    t = np.clip((950.0 - extent) / 350.0, 0.0, 1.0)
    return float(0.85 + 0.15 * t)


def _side_by_side(rng, size: int, roles: Sequence[int], narrow: bool, vertical: bool = False) -> tuple:
    """Components in a row with content-driven scales.

    Left to right for NL01 / NL04, top to bottom for NL02 / NL05.  The
    components are drawn the same way in both directions; only the
    placement priors swap axes.
    """
    u = UNITS_PER_EM
    glyphs = []
    for r in roles:
        w = rng.uniform(*ROLE_WIDTHS[r])
        h = rng.uniform(*ROLE_HEIGHTS[r])
        glyphs.append(random_component(rng, r, w, h))
    masses = np.array([render(g, size, center=True).image.sum() for g in glyphs])
    shares = masses / masses.sum()
    along = []
    for share in shares:
        jitter = rng.uniform(-0.01, 0.01)
        if narrow:
            # three slots share the split axis
            s = 0.28 + 0.10 * np.clip((share - 0.15) / 0.35, 0.0, 1.0) + jitter
            along.append(float(np.clip(s, 0.28, 0.38)))
        else:
            along.append(_split_scale(share, jitter))
    split_axis, cross_axis = (3, 2) if vertical else (2, 3)
    across = [_cross_scale(_center(g)[cross_axis]) for g in glyphs]
    lengths = [s * _center(g)[split_axis] for s, g in zip(along, glyphs)]
    gaps = [rng.uniform(0.0, 0.05) * u for _ in range(len(glyphs) - 1)]
    total = sum(lengths) + sum(gaps)
    pos = (u - total) / 2
    placements = []
    for i, g in enumerate(glyphs):
        mid = pos + lengths[i] / 2
        if vertical:
            # first slot on top; font units are y up
            placements.append(_place(g, across[i], along[i], u / 2, u - mid))
        else:
            placements.append(_place(g, along[i], across[i], mid, u / 2))
        pos += lengths[i] + (gaps[i] if i < len(gaps) else 0.0)
    return glyphs, placements


def _enclosure(rng, size: int, variation: int) -> tuple:
    u = UNITS_PER_EM
    outer = random_component(rng, 1, rng.uniform(700, 900), rng.uniform(700, 900))
    inner = random_component(rng, 0, rng.uniform(500, 800), rng.uniform(500, 800))
    so = rng.uniform(0.9, 1.0)
    si = rng.uniform(0.35, 0.55)
    ox, oy = ENCLOSURE_OFFSETS[variation]
    placements = [
        _place(outer, so, so, u / 2, u / 2),
        _place(inner, si, si, u / 2 + ox * u, u / 2 + oy * u),
    ]
    return [outer, inner], placements


def generate_synthetic(
    seed: int,
    n: int,
    layout: Union[str, Layout],
    size: int = 64,
) -> List[Sample]:
    """``n`` samples for ``layout`` (NL01, NL02, NL04, NL05 or NL03-k)."""
    if isinstance(layout, str):
        layout = parse_layout(layout)
    if layout.kind not in ("NL01", "NL02", "NL03", "NL04", "NL05"):
        raise ValueError(f"no synthetic prior for layout {layout}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    frame = RenderFrame(size, UNITS_PER_EM)
    samples = []
    for _ in range(n):
        if layout.kind == "NL03":
            glyphs, placements = _enclosure(rng, size, layout.variation)
        else:
            three = layout.kind in ("NL04", "NL05")
            roles = (0, 1, 1) if three else (0, 1)
            vertical = layout.kind in ("NL02", "NL05")
            glyphs, placements = _side_by_side(rng, size, roles, narrow=three, vertical=vertical)
        renders = [render(g, frame, center=True) for g in glyphs]
        target = rasterize(merge([apply_affine(g, m) for g, m in zip(glyphs, placements)]), frame)
        samples.append(
            Sample(
                layout,
                np.stack([r.image for r in renders]),
                target,
                glyphs,
                [r.frame for r in renders],
                placements,
            )
        )
    return samples


def dataset_arrays(samples: Sequence[Sample], dtype=np.float64):
    """Stack samples into ``(N, K, H, W)`` components and ``(N, H, W)`` targets."""
    if not samples:
        raise ValueError("empty dataset")
    comps = np.stack([s.components for s in samples]).astype(dtype)
    targets = np.stack([s.target for s in samples]).astype(dtype)
    return comps, targets


def sample_from_arrays(components, target, layout: Optional[Layout] = None, thetas=None) -> Sample:
    """Wrap bare rasters (no vector data) so they can flow through training."""
    return Sample(layout, np.asarray(components), np.asarray(target), [], [], [], thetas)


def save_dataset(samples: Sequence[Sample], path) -> None:
    """Rasters and ground-truth sampling affines as one ``.npz`` file."""
    comps, targets = dataset_arrays(samples)
    thetas = np.stack([s.thetas() for s in samples])
    np.savez_compressed(
        path, components=comps, targets=targets, thetas=thetas, layout=np.array(str(samples[0].layout))
    )


def load_dataset(path) -> List[Sample]:
    with np.load(path, allow_pickle=False) as data:
        missing = {"components", "targets", "layout"} - set(data.files)
        if missing:
            raise ValueError(f"{path}: dataset lacks {sorted(missing)}")
        layout = parse_layout(str(data["layout"]))
        comps, targets = data["components"], data["targets"]
        thetas = data["thetas"] if "thetas" in data.files else None
    if comps.ndim != 4 or targets.shape != (comps.shape[0],) + comps.shape[2:]:
        raise ValueError(f"{path}: inconsistent array shapes")
    return [
        sample_from_arrays(comps[i], targets[i], layout, None if thetas is None else thetas[i])
        for i in range(comps.shape[0])
    ]
