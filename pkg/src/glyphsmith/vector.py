"""Vector glyphs: SVG path subset I/O, affine transforms and frame conversion.

Glyph coordinates are font units, y up, origin at the em box's
left-bottom corner.  Affines acting on glyphs are 3x3 matrices in column
convention (``p' = M @ [x, y, 1]``).
"""

from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

Point = Tuple[float, float]


class Line(NamedTuple):
    p1: Point


class Quadratic(NamedTuple):
    c: Point
    p1: Point


class Cubic(NamedTuple):
    c1: Point
    c2: Point
    p1: Point


Segment = Union[Line, Quadratic, Cubic]


class SvgPathError(ValueError):
    pass


@dataclass(frozen=True)
class Contour:
    """Closed outline: ``start`` followed by segments, last one ending at ``start``."""

    start: Point
    segments: Tuple[Segment, ...]

    def points(self) -> List[Point]:
        pts = [self.start]
        for seg in self.segments:
            pts.extend(seg)
        return pts

    @property
    def closed(self) -> bool:
        return bool(self.segments) and tuple(self.segments[-1][-1]) == tuple(self.start)


@dataclass(frozen=True)
class VectorGlyph:
    units_per_em: int
    contours: Tuple[Contour, ...] = ()
    advance: Optional[float] = None

    def __post_init__(self):
        if self.units_per_em <= 0:
            raise ValueError("units_per_em must be positive")

    @property
    def empty(self) -> bool:
        return not self.contours

    def bbox(self) -> Optional[Tuple[float, float, float, float]]:
        """Tight bounds ``(xmin, ymin, xmax, ymax)`` including curve extrema."""
        if not self.contours:
            return None
        xs: List[float] = []
        ys: List[float] = []
        for c in self.contours:
            prev = c.start
            xs.append(prev[0])
            ys.append(prev[1])
            for seg in c.segments:
                for x, y in _segment_extrema(prev, seg):
                    xs.append(x)
                    ys.append(y)
                prev = seg[-1]
        return min(xs), min(ys), max(xs), max(ys)


def _quad_roots(a: float, b: float, c: float) -> List[float]:
    if abs(a) < 1e-14:
        return [-c / b] if abs(b) > 1e-14 else []
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    s = math.sqrt(disc)
    return [(-b + s) / (2 * a), (-b - s) / (2 * a)]


def _segment_extrema(p0: Point, seg: Segment) -> List[Point]:
    pts = [seg[-1]]
    if isinstance(seg, Quadratic):
        for axis in (0, 1):
            den = p0[axis] - 2 * seg.c[axis] + seg.p1[axis]
            if abs(den) > 1e-14:
                t = (p0[axis] - seg.c[axis]) / den
                if 0 < t < 1:
                    pts.append(_eval(p0, seg, t))
    elif isinstance(seg, Cubic):
        for axis in (0, 1):
            a0, a1, a2, a3 = p0[axis], seg.c1[axis], seg.c2[axis], seg.p1[axis]
            # derivative coefficients of the cubic Bezier
            qa = -a0 + 3 * a1 - 3 * a2 + a3
            qb = 2 * (a0 - 2 * a1 + a2)
            qc = a1 - a0
            for t in _quad_roots(qa, qb, qc):
                if 0 < t < 1:
                    pts.append(_eval(p0, seg, t))
    return pts


def _eval(p0: Point, seg: Segment, t: float) -> Point:
    u = 1 - t
    if isinstance(seg, Quadratic):
        return tuple(u * u * p0[i] + 2 * u * t * seg.c[i] + t * t * seg.p1[i] for i in (0, 1))
    return tuple(
        u**3 * p0[i] + 3 * u * u * t * seg.c1[i] + 3 * u * t * t * seg.c2[i] + t**3 * seg.p1[i]
        for i in (0, 1)
    )


# ---------------------------------------------------------------------------
# SVG path subset

_TOKEN_RE = re.compile(
    r"\s*(?:([MmLlHhVvQqCcZz])|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))\s*,?"
)
_ARGC = {"M": 2, "L": 2, "H": 1, "V": 1, "Q": 4, "C": 6, "Z": 0}


def _tokens(d: str):
    pos = 0
    d = d.strip()
    while pos < len(d):
        m = _TOKEN_RE.match(d, pos)
        if not m or m.end() == pos:
            ch = d[pos]
            if ch.isalpha():
                raise SvgPathError(f"unknown path command {ch!r} at offset {pos}")
            raise SvgPathError(f"cannot parse number at offset {pos}: {d[pos:pos + 12]!r}")
        pos = m.end()
        if m.group(1):
            yield m.group(1)
        else:
            yield float(m.group(2))


def parse_svg_path(d: str) -> List[Contour]:
    """Parse a path string into closed contours.

    Supports M, L, H, V, Q, C, Z in absolute and relative form.  Open
    subpaths are closed with a straight line.
    """
    toks = list(_tokens(d))
    if not toks:
        raise SvgPathError("empty path")
    if not isinstance(toks[0], str) or toks[0] not in "Mm":
        raise SvgPathError("path must start with a moveto")

    contours: List[Contour] = []
    start: Optional[Point] = None
    cur: Point = (0.0, 0.0)
    segs: List[Segment] = []

    def close():
        nonlocal segs
        if start is None:
            return
        if segs or cur != start:
            if cur != start:
                segs.append(Line(start))
            contours.append(Contour(start, tuple(segs)))
        segs = []

    i = 0
    cmd = None
    while i < len(toks):
        tok = toks[i]
        if isinstance(tok, str):
            cmd = tok
            i += 1
            if cmd in "Zz":
                close()
                if start is not None:
                    cur = start
                start = None
                continue
        elif cmd is None or cmd in "Zz":
            raise SvgPathError("number without a command")
        argc = _ARGC[cmd.upper()]
        args = toks[i:i + argc]
        if len(args) < argc or any(isinstance(a, str) for a in args):
            raise SvgPathError(f"command {cmd} expects {argc} numbers")
        i += argc
        rel = cmd.islower()
        ox, oy = cur if rel else (0.0, 0.0)
        up = cmd.upper()
        if up == "M":
            close()
            cur = (ox + args[0], oy + args[1])
            start = cur
            # subsequent pairs are implicit linetos
            cmd = "l" if rel else "L"
        else:
            if start is None:
                start = cur
            if up == "L":
                cur = (ox + args[0], oy + args[1])
                segs.append(Line(cur))
            elif up == "H":
                cur = ((cur[0] if rel else 0.0) + args[0], cur[1])
                segs.append(Line(cur))
            elif up == "V":
                cur = (cur[0], (cur[1] if rel else 0.0) + args[0])
                segs.append(Line(cur))
            elif up == "Q":
                c = (ox + args[0], oy + args[1])
                cur = (ox + args[2], oy + args[3])
                segs.append(Quadratic(c, cur))
            elif up == "C":
                c1 = (ox + args[0], oy + args[1])
                c2 = (ox + args[2], oy + args[3])
                cur = (ox + args[4], oy + args[5])
                segs.append(Cubic(c1, c2, cur))
    close()
    return contours


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return format(v, ".12g")


def _pt(p: Point) -> str:
    return f"{_num(p[0])} {_num(p[1])}"


def to_svg_path(contours: Iterable[Contour]) -> str:
    parts = []
    for c in contours:
        out = [f"M {_pt(c.start)}"]
        segs = list(c.segments)
        # a final straight edge back to the start is written as Z
        if len(segs) > 1 and isinstance(segs[-1], Line) and tuple(segs[-1].p1) == tuple(c.start):
            segs = segs[:-1]
        for s in segs:
            if isinstance(s, Line):
                out.append(f"L {_pt(s.p1)}")
            elif isinstance(s, Quadratic):
                out.append(f"Q {_pt(s.c)} {_pt(s.p1)}")
            else:
                out.append(f"C {_pt(s.c1)} {_pt(s.c2)} {_pt(s.p1)}")
        out.append("Z")
        parts.append(" ".join(out))
    return " ".join(parts)


# ---------------------------------------------------------------------------
# affines on glyphs


def translate(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def scale(sx: float, sy: Optional[float] = None, about: Point = (0.0, 0.0)) -> np.ndarray:
    sy = sx if sy is None else sy
    m = np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    return translate(*about) @ m @ translate(-about[0], -about[1])


def _check_affine(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 affine, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("affine has non-finite entries")
    if abs(np.linalg.det(m[:2, :2])) < 1e-12:
        raise ValueError("singular affine")
    return m


def _map(m: np.ndarray, p: Point) -> Point:
    return (
        float(m[0, 0] * p[0] + m[0, 1] * p[1] + m[0, 2]),
        float(m[1, 0] * p[0] + m[1, 1] * p[1] + m[1, 2]),
    )


def apply_affine(glyph: VectorGlyph, m: np.ndarray) -> VectorGlyph:
    """Map every anchor and control point through ``m``."""
    m = _check_affine(m)
    contours = []
    for c in glyph.contours:
        segs = tuple(type(s)(*(_map(m, p) for p in s)) for s in c.segments)
        start = _map(m, c.start)
        # keep closure exact despite rounding
        if segs and c.closed:
            last = segs[-1]
            segs = segs[:-1] + (last._replace(p1=start),)
        contours.append(Contour(start, segs))
    return replace(glyph, contours=tuple(contours))


def merge(glyphs: Sequence[VectorGlyph]) -> VectorGlyph:
    """Concatenate contours in input order (no path union)."""
    if not glyphs:
        raise ValueError("nothing to merge")
    upm = glyphs[0].units_per_em
    for g in glyphs[1:]:
        if g.units_per_em != upm:
            raise ValueError(f"units_per_em mismatch: {upm} vs {g.units_per_em}")
    contours = tuple(c for g in glyphs for c in g.contours)
    return VectorGlyph(upm, contours, glyphs[0].advance)


# ---------------------------------------------------------------------------
# sampling-space <-> font-unit-space


@dataclass(frozen=True)
class RenderFrame:
    """How font units land on a square raster.

    The em box maps onto the full image (scale ``size / units_per_em``)
    after shifting glyphs by ``(dx, dy)`` font units.  Normalized sampling
    coordinates use the half-pixel convention: pixel ``j`` sits at
    ``(2j + 1) / size - 1``, so the em box spans exactly ``[-1, 1]``.
    """

    size: int
    units_per_em: int
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        if self.size < 8:
            raise ValueError("frame size must be at least 8 px")
        if self.units_per_em <= 0:
            raise ValueError("units_per_em must be positive")

    @property
    def px_per_unit(self) -> float:
        return self.size / self.units_per_em

    def shift(self) -> np.ndarray:
        return translate(self.dx, self.dy)

    def normalizer(self) -> np.ndarray:
        """Font units -> normalized sampling coordinates (y flipped)."""
        u = self.units_per_em
        return np.array(
            [
                [2.0 / u, 0.0, 2.0 * self.dx / u - 1.0],
                [0.0, -2.0 / u, 1.0 - 2.0 * self.dy / u],
                [0.0, 0.0, 1.0],
            ]
        )

    def denormalizer(self) -> np.ndarray:
        """Normalized sampling coordinates -> font units."""
        h = self.units_per_em / 2.0
        return np.array(
            [[h, 0.0, h - self.dx], [0.0, -h, h - self.dy], [0.0, 0.0, 1.0]]
        )


def augment(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(2, 3)
    return np.vstack([theta, [0.0, 0.0, 1.0]])


def grid_to_content_affine(theta, frame: RenderFrame) -> np.ndarray:
    """Font-unit affine moving glyph content the way sampler ``theta`` moves pixels.

    ``theta`` maps output sample locations to input locations, so content
    moves by its inverse, conjugated into font units by the frame.
    """
    a = augment(theta)
    if abs(np.linalg.det(a[:2, :2])) < 1e-12:
        raise ValueError("singular sampling affine")
    # I + N^-1 (A^-1 - I) N keeps the identity exact
    eye = np.eye(3)
    return eye + frame.denormalizer() @ (np.linalg.inv(a) - eye) @ frame.normalizer()


def content_to_grid_affine(m: np.ndarray, frame: RenderFrame) -> np.ndarray:
    """Inverse of :func:`grid_to_content_affine`; returns the 2x3 sampler matrix."""
    m = _check_affine(m)
    eye = np.eye(3)
    a = eye + frame.normalizer() @ (np.linalg.inv(m) - eye) @ frame.denormalizer()
    return a[:2]


def content_to_editor_params(m: np.ndarray, origin: Point = (0.0, 0.0)) -> List[float]:
    """Flatten ``m`` for a font editor that transforms about ``origin``.

    Returns ``[scale_x, skew_x, skew_y, scale_y, translate_x, translate_y]``
    of the affine expressed in coordinates relative to ``origin`` (the
    component's left-bottom corner).
    """
    m = _check_affine(m)
    t = translate(*origin)
    rel = np.linalg.solve(t, m @ t)
    return [rel[0, 0], rel[0, 1], rel[1, 0], rel[1, 1], rel[0, 2], rel[1, 2]]


def editor_params_to_content(params: Sequence[float], origin: Point = (0.0, 0.0)) -> np.ndarray:
    sx, kx, ky, sy, tx, ty = (float(v) for v in params)
    rel = np.array([[sx, kx, tx], [ky, sy, ty], [0.0, 0.0, 1.0]])
    t = translate(*origin)
    return t @ rel @ np.linalg.inv(t)


# ---------------------------------------------------------------------------
# glyph sources


def glyph_from_path(d: str, units_per_em: int, advance: Optional[float] = None) -> VectorGlyph:
    d = d.strip()
    contours = tuple(parse_svg_path(d)) if d else ()
    return VectorGlyph(units_per_em, contours, advance)


def load_glyph_source(path: Union[str, Path]) -> Dict[str, VectorGlyph]:
    """Load glyphs from a JSON glyph set, a single SVG file, or a directory of SVGs.

    JSON layout::

        {"units_per_em": 1000,
         "glyphs": {"女": {"advance": 1000, "d": "M ..."}, ...}}

    An SVG file holds one glyph; its character is taken from the
    ``data-char`` attribute of the root or, failing that, the file stem.
    The em size comes from the viewBox height.
    """
    path = Path(path)
    if path.is_dir():
        return dict(_load_svg_glyph(p) for p in sorted(path.glob("*.svg")))
    if path.suffix.lower() == ".svg":
        return dict([_load_svg_glyph(path)])
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    upm = int(doc["units_per_em"])
    out = {}
    for ch, spec in doc["glyphs"].items():
        out[ch] = glyph_from_path(spec.get("d", ""), upm, spec.get("advance"))
    return out


def _load_svg_glyph(path: Path) -> Tuple[str, VectorGlyph]:
    root = ET.parse(path).getroot()
    vb = root.get("viewBox")
    if not vb:
        raise ValueError(f"{path}: missing viewBox")
    upm = int(round(float(vb.replace(",", " ").split()[3])))
    d = ""
    for el in root.iter():
        if el.tag.rsplit("}", 1)[-1] == "path":
            d = el.get("d", "")
            break
    ch = root.get("data-char") or path.stem
    if len(ch) != 1:
        # stems like "uni5A92" or "U+5A92"
        m = re.search(r"([0-9A-Fa-f]{4,6})$", ch)
        if not m:
            raise ValueError(f"{path}: cannot determine character")
        ch = chr(int(m.group(1), 16))
    return ch, glyph_from_path(d, upm, upm)


def save_glyph_source(glyphs: Dict[str, VectorGlyph], path: Union[str, Path]) -> None:
    if not glyphs:
        raise ValueError("no glyphs to save")
    upm = next(iter(glyphs.values())).units_per_em
    doc = {
        "units_per_em": upm,
        "glyphs": {
            ch: {"advance": g.advance if g.advance is not None else upm, "d": to_svg_path(g.contours)}
            for ch, g in glyphs.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=1)


def glyph_svg(glyph: VectorGlyph, char: Optional[str] = None) -> str:
    """Standalone SVG document; the path keeps font-unit (y-up) coordinates."""
    u = glyph.units_per_em
    attr = f' data-char="{char}"' if char else ""
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {u} {u}"{attr}>\n'
        f'  <g transform="matrix(1 0 0 -1 0 {u})">\n'
        f'    <path d="{to_svg_path(glyph.contours)}"/>\n'
        f"  </g>\n</svg>\n"
    )
