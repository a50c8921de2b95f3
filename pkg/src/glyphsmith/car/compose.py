"""Composing characters with a trained regressor, in raster and vector form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from ..decomp import CompositionPlan, Layout, StepRef
from ..diffops.warp import warp_forward
from ..raster import render
from ..vector import RenderFrame, VectorGlyph, apply_affine, grid_to_content_affine, merge
from .model import CarModel


def regress_affines(model: CarModel, images: Sequence[np.ndarray]) -> List[np.ndarray]:
    """One 2x3 sampling affine per component image."""
    if len(images) != model.config.n_components:
        raise ValueError(f"model expects {model.config.n_components} components, got {len(images)}")
    theta = model.predict(np.stack(images)[None])[0]
    return list(theta)


def forward_compose(model: CarModel, rasters: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], np.ndarray]:
    """Warp each component by its regressed affine and sum (unclamped)."""
    thetas = regress_affines(model, rasters)
    s = np.zeros_like(np.asarray(rasters[0], dtype=float))
    for img, th in zip(rasters, thetas):
        s = s + warp_forward(np.asarray(img, dtype=float), th)
    return thetas, s


def placement_affine(theta, frame: RenderFrame) -> np.ndarray:
    """Font-unit affine taking an operand's own coordinates to output em coordinates.

    The operand was rendered with the centering shift in ``frame``; the
    output raster uses an unshifted frame of the same size.
    """
    return frame.shift() @ grid_to_content_affine(theta, frame)


@dataclass
class Composition:
    target: str
    leaves: List[str]
    affines: List[np.ndarray]  # per leaf, font units, into the output em box
    glyph: VectorGlyph
    raster: np.ndarray
    thetas: List[List[np.ndarray]]  # per step


@dataclass
class _Operand:
    leaves: List[str]
    affines: List[np.ndarray]
    glyph: VectorGlyph


ModelLookup = Union[CarModel, Mapping[str, CarModel]]


def _model_for(models: ModelLookup, layout: Layout) -> CarModel:
    if isinstance(models, CarModel):
        return models
    for key in (str(layout), layout.kind):
        if key in models:
            return models[key]
    raise KeyError(f"no model registered for layout {layout}")


def iterative_compose(
    models: ModelLookup,
    plan: CompositionPlan,
    glyphs: Mapping[str, VectorGlyph],
) -> Composition:
    """Run a composition plan step by step.

    Each step renders its operands centered, regresses sampling affines,
    and turns them into font-unit placements.  Intermediate results are
    re-centered by the next step; leaf affines accumulate through every
    step they pass.
    """
    results: List[_Operand] = []
    raster = None
    step_thetas = []
    for step in plan.steps:
        model = _model_for(models, step.layout)
        size = model.config.input_size
        operands = []
        for op in step.operands:
            if isinstance(op, StepRef):
                operands.append(results[op.index])
            else:
                if op not in glyphs:
                    raise KeyError(f"missing glyph for component {op!r}")
                operands.append(_Operand([op], [np.eye(3)], glyphs[op]))
        renders = [render(o.glyph, RenderFrame(size, o.glyph.units_per_em), center=True) for o in operands]
        thetas, s = forward_compose(model, [r.image for r in renders])
        step_thetas.append(thetas)
        leaves, affines, placed = [], [], []
        for o, r, th in zip(operands, renders, thetas):
            place = placement_affine(th, r.frame)
            leaves.extend(o.leaves)
            affines.extend(place @ a for a in o.affines)
            placed.append(apply_affine(o.glyph, place))
        results.append(_Operand(leaves, affines, merge(placed)))
        raster = s
    final = results[-1]
    leaf_glyphs = [apply_affine(glyphs[c], a) for c, a in zip(final.leaves, final.affines)]
    return Composition(plan.target, final.leaves, final.affines, merge(leaf_glyphs), raster, step_thetas)
