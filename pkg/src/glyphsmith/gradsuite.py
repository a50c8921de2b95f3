"""Finite-difference checks for every hand-written backward pass.

Each check draws random inputs from a seed, projects the output onto a
random direction to get a scalar, and compares analytic gradients against
central differences in double precision.  Inputs sitting within reach of
a kink (relu at 0, |.| at 0, clip edges, pooling ties, bilinear cell
edges) are masked out or redrawn.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .car import fusion
from .car.model import CarModel
from .diffops import nn
from .diffops.gradcheck import GradReport, ParamCheck, grad_check
from .diffops.losses import LossWeights, loss_centroid, loss_inertia, loss_overlap, loss_pixel, loss_total
from .diffops.warp import warp_backward, warp_forward

H = 1e-5
TOL = 1e-5
MODEL_TOL = 1e-4
# kink margin: a perturbation of h moves any input by at most this much
MARGIN = 1e-3


def _projected(fn, g):
    return lambda: float(np.sum(fn() * g))


def check_warp(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    img = rng.random((7, 9))
    while True:
        theta = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]) + rng.normal(0, 0.15, (2, 3))
        # keep every sample location clear of pixel-cell edges
        h, w = img.shape
        u = np.arange(w) - (w - 1) / 2
        v = np.arange(h) - (h - 1) / 2
        px = theta[0, 0] * u[None] + theta[0, 1] * (w / h) * v[:, None] + w / 2 * theta[0, 2] + (w - 1) / 2
        py = theta[1, 0] * (h / w) * u[None] + theta[1, 1] * v[:, None] + h / 2 * theta[1, 2] + (h - 1) / 2
        frac = np.concatenate([(px - np.round(px)).ravel(), (py - np.round(py)).ravel()])
        if np.min(np.abs(frac)) > 50 * H * (w + h):
            break
    g = rng.normal(size=img.shape)
    d_img, d_theta = warp_backward(img, theta, g)
    fn = _projected(lambda: warp_forward(img, theta), g)
    return grad_check(fn, {"image": img, "theta": theta}, {"image": d_img, "theta": d_theta}, H, TOL, label=f"warp[{seed}]")


def _loss_check(name, loss_fn, s, c, exclude, seed):
    _, grad = loss_fn(s, c) if c is not None else loss_fn(s)
    fn = (lambda: float(loss_fn(s, c)[0])) if c is not None else (lambda: float(loss_fn(s)[0]))
    return grad_check(fn, {"S": s}, {"S": grad}, H, TOL, exclude={"S": exclude}, label=f"{name}[{seed}]")


def check_loss_pixel(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    s, c = rng.random((8, 8)) * 2, rng.random((8, 8))
    return _loss_check("loss_pixel", loss_pixel, s, c, np.abs(s - c) < MARGIN, seed)


def check_loss_overlap(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    s = rng.random((8, 8)) * 2.5
    near = (np.abs(s - 1) < MARGIN) | (np.abs(s - 2) < MARGIN)
    return _loss_check("loss_overlap", lambda x: loss_overlap(x), s, None, near, seed)


def check_loss_centroid(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    s, c = rng.random((8, 8)) * 2, rng.random((8, 8))
    return _loss_check("loss_centroid", loss_centroid, s, c, np.zeros(s.shape, bool), seed)


def check_loss_inertia(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    s, c = rng.random((8, 8)) * 2, rng.random((8, 8))
    return _loss_check("loss_inertia", loss_inertia, s, c, np.zeros(s.shape, bool), seed)


def _primitive(label, forward, backward, inputs: Dict[str, np.ndarray], rng, exclude=None):
    y, cache = forward(*inputs.values())
    g = rng.normal(size=y.shape)
    grads = dict(zip(inputs, backward(g, cache)))
    fn = _projected(lambda: forward(*inputs.values())[0], g)
    return grad_check(fn, inputs, grads, H, TOL, exclude=exclude, label=label)


def check_dense(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    inputs = {"x": rng.normal(size=(3, 5)), "w": rng.normal(size=(5, 4)), "b": rng.normal(size=4)}
    return _primitive(f"dense[{seed}]", nn.dense, nn.dense_backward, inputs, rng)


def check_conv3x3(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    inputs = {"x": rng.normal(size=(2, 3, 5, 6)), "k": rng.normal(size=(4, 3, 3, 3)), "b": rng.normal(size=4)}
    return _primitive(f"conv3x3[{seed}]", nn.conv3x3, nn.conv3x3_backward, inputs, rng)


def check_groupnorm(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    inputs = {"x": rng.normal(size=(2, 8, 3, 3)), "scale": rng.normal(size=8), "shift": rng.normal(size=8)}
    return _primitive(
        f"groupnorm[{seed}]", lambda x, a, b: nn.groupnorm(x, a, b, 4), nn.groupnorm_backward, inputs, rng
    )


def check_relu(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 6))
    return _primitive(f"relu[{seed}]", nn.relu, nn.relu_backward, {"x": x}, rng, {"x": np.abs(x) < MARGIN})


def check_maxpool2(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4, 6))
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    top = np.sort(blocks, axis=-1)
    tied = (top[..., -1] - top[..., -2]) < MARGIN
    # any input in a near-tied window is kink-adjacent
    mask = np.repeat(np.repeat(tied, 2, axis=2), 2, axis=3)
    return _primitive(f"maxpool2[{seed}]", nn.maxpool2, nn.maxpool2_backward, {"x": x}, rng, {"x": mask})


def check_softmax(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    return _primitive(f"softmax[{seed}]", nn.softmax, nn.softmax_backward, {"x": rng.normal(size=(3, 5))}, rng)


def check_adain(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    inputs = {"self": rng.normal(size=(2, 3, 3, 3)), "other": rng.normal(size=(2, 3, 3, 3))}
    return _primitive(f"fuse_adain[{seed}]", fusion.fuse_adain, fusion.fuse_adain_backward, inputs, rng)


def check_attention(seed: int) -> GradReport:
    rng = np.random.default_rng(seed)
    c, d = 4, 5
    inputs = {
        "self": rng.normal(size=(2, c, 2, 3)),
        "other": rng.normal(size=(2, c, 2, 3)),
        "wq": rng.normal(size=(c, d)),
        "bq": rng.normal(size=d),
        "wk": rng.normal(size=(c, d)),
        "bk": rng.normal(size=d),
        "wv": rng.normal(size=(c, d)),
        "bv": rng.normal(size=d),
    }
    report = _primitive(
        f"fuse_attention[{seed}]", fusion.fuse_attention, fusion.fuse_attention_backward, inputs, rng,
        {"bk": np.ones(d, dtype=bool)},
    )
    # a key bias shifts every logit of a query equally, so softmax ignores it:
    # the exact gradient is zero and relative error would only compare noise
    y, cache = fusion.fuse_attention(*inputs.values())
    dbk = fusion.fuse_attention_backward(rng.normal(size=y.shape), cache)[5]
    worst = float(np.max(np.abs(dbk)))
    report.params["bk"] = ParamCheck("bk", worst, d, 0, worst < 1e-12)
    return report


def check_model(fusion_mode: str, seed: int = 0, samples: int = 8) -> GradReport:
    """Loss of a composed miniature character w.r.t. every parameter tensor.

    The last layer and norms are nudged off their initial values so the
    regressed affines and every gradient path are non-trivial.
    """
    rng = np.random.default_rng(seed)
    model = CarModel(input_size=16, fusion=fusion_mode, seed=seed)
    for name, v in model.params.items():
        if name.startswith(("fc3", "gn")):
            model.params[name] = v + rng.normal(0, 0.05, v.shape)
    comps = rng.random((2, 2, 16, 16))
    target = rng.random((2, 16, 16))
    weights = LossWeights(1.0, 1.0, 5e-2, 1e-4)
    n, k = comps.shape[:2]

    def objective(with_grad=False):
        theta, cache = model.forward(comps)
        flat = comps.reshape(n * k, 16, 16)
        s = warp_forward(flat, theta.reshape(n * k, 2, 3)).reshape(n, k, 16, 16).sum(axis=1)
        value, d_s, _ = loss_total(s, target, weights)
        if not with_grad:
            return float(value.sum())
        d_rep = np.broadcast_to(d_s[:, None], comps.shape).reshape(n * k, 16, 16)
        _, d_theta = warp_backward(flat, theta.reshape(n * k, 2, 3), d_rep, need_image_grad=False)
        return model.backward(d_theta.reshape(n, k, 2, 3), cache)

    grads = objective(with_grad=True)
    return grad_check(
        objective, model.params, grads, h=1e-6, tol=MODEL_TOL, label=f"model[{fusion_mode}]",
        max_samples=samples, seed=seed,
    )


PRIMITIVE_CHECKS: Dict[str, Callable[[int], GradReport]] = {
    "warp": check_warp,
    "loss_pixel": check_loss_pixel,
    "loss_overlap": check_loss_overlap,
    "loss_centroid": check_loss_centroid,
    "loss_inertia": check_loss_inertia,
    "dense": check_dense,
    "conv3x3": check_conv3x3,
    "groupnorm": check_groupnorm,
    "relu": check_relu,
    "maxpool2": check_maxpool2,
    "softmax": check_softmax,
    "fuse_adain": check_adain,
    "fuse_attention": check_attention,
}


@dataclass
class SuiteResult:
    reports: List[GradReport] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def summary(self) -> Dict[str, Dict[str, float]]:
        out: Dict[str, Dict[str, float]] = {}
        for r in self.reports:
            name = r.label.split("[")[0]
            entry = out.setdefault(name, {"runs": 0, "failed": 0, "max_rel_error": 0.0, "excluded": 0})
            entry["runs"] += 1
            entry["failed"] += 0 if r.passed else 1
            entry["max_rel_error"] = max(entry["max_rel_error"], r.max_rel_error)
            entry["excluded"] += r.excluded
        return out

    def lines(self) -> List[str]:
        rows = []
        for name, e in self.summary().items():
            status = "PASS" if not e["failed"] else "FAIL"
            rows.append(
                f"{status} {name:<16} runs={e['runs']:<3} max_rel_err={e['max_rel_error']:.2e} "
                f"excluded={e['excluded']}"
            )
        return rows


def run_suite(seeds: int = 20, model_fusions=("stack", "adain", "attention")) -> SuiteResult:
    start = time.perf_counter()
    result = SuiteResult()
    for check in PRIMITIVE_CHECKS.values():
        for seed in range(seeds):
            result.reports.append(check(seed))
    for mode in model_fusions:
        result.reports.append(check_model(mode))
    result.seconds = time.perf_counter() - start
    return result
