"""SGD with momentum on the composition loss."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..car.model import CarModel, ModelConfig
from ..decomp import Layout, parse_layout
from ..diffops.losses import LossWeights, loss_total
from ..diffops.warp import warp_backward, warp_forward
from .checkpoint import Checkpoint, load_checkpoint
from .rng import SplitMix64, shuffle
from .synthetic import Sample, dataset_arrays


class TrainingDiverged(RuntimeError):
    """Raised when a batch produces a non-finite loss."""

    def __init__(self, message: str, dump: Optional[Path] = None):
        super().__init__(message)
        self.dump = dump


def default_weights(layout: Union[str, Layout]) -> LossWeights:
    kind = layout.kind if isinstance(layout, Layout) else parse_layout(layout).kind
    if kind == "NL03":
        return LossWeights(1.0, 1.0, 5e-2, 1e-8)
    # side by side: overlap off, it ejects narrow components before they find their slot
    return LossWeights(1.0, 0.0, 0.0, 0.0)


@dataclass
class TrainConfig:
    layout: str = "NL01"
    lr: float = 2e-3
    momentum: float = 0.9
    epochs: int = 42
    lr_step: int = 6
    batch_size: int = 16
    weights: Optional[LossWeights] = None
    seed: int = 30
    input_size: int = 64
    fusion: str = "stack"
    switcher: bool = False
    init_checkpoint: Optional[str] = None
    flip: bool = False  # joint horizontal flip of components and target

    def __post_init__(self):
        lay = parse_layout(self.layout) if isinstance(self.layout, str) else self.layout
        self.layout = str(lay)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr_step <= 0 or self.batch_size <= 0:
            raise ValueError("lr_step and batch_size must be positive")
        if self.weights is None:
            self.weights = default_weights(lay)
        elif not isinstance(self.weights, LossWeights):
            self.weights = LossWeights(*self.weights)

    @property
    def n_components(self) -> int:
        return 3 if parse_layout(self.layout).kind in ("NL04", "NL05") else 2

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.lr_step)

    def effective_weights(self) -> LossWeights:
        if self.input_size == 256:
            return self.weights
        return self.weights.rescaled(self.input_size)

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["weights"] = list(self.weights.as_tuple())
        return d


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_mae: Optional[float]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: List[EpochLog] = field(default_factory=list)

    @property
    def model(self) -> CarModel:
        return self.checkpoint.model


def initial_model(config: TrainConfig) -> CarModel:
    if config.init_checkpoint:
        model = load_checkpoint(config.init_checkpoint).model
        if model.config.input_size != config.input_size:
            raise ValueError("init checkpoint was trained at a different input size")
        if model.config.n_components != config.n_components:
            raise ValueError("init checkpoint has a different component count")
    else:
        mc = ModelConfig(input_size=config.input_size, fusion=config.fusion, n_components=config.n_components)
        model = CarModel(mc, seed=config.seed)
    if config.switcher:
        model.switcher = True
    return model


def batch_loss(model: CarModel, comps, targets, weights: LossWeights, dtype=np.float32, grads: bool = True):
    """Mean loss over a batch and (optionally) parameter gradients."""
    n, k, h, w = comps.shape
    theta, cache = model.forward(comps, dtype=dtype)
    flat_imgs = comps.reshape(n * k, h, w)
    flat_th = theta.reshape(n * k, 2, 3)
    s = warp_forward(flat_imgs, flat_th).reshape(n, k, h, w).sum(axis=1)
    value, d_s, _ = loss_total(s, targets, weights)
    loss = float(np.mean(value, dtype=np.float64))
    if not grads:
        return loss, None
    d_s = d_s / n
    d_s_rep = np.broadcast_to(d_s[:, None], (n, k, h, w)).reshape(n * k, h, w)
    _, d_theta = warp_backward(flat_imgs, flat_th, d_s_rep, need_image_grad=False)
    return loss, model.backward(d_theta.reshape(n, k, 2, 3), cache)


def _dump_batch(dump_dir, epoch, idx, comps, targets) -> Path:
    path = Path(dump_dir) / f"diverged_epoch{epoch}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, indices=np.asarray(idx), components=comps, targets=targets)
    return path


def train(
    config: TrainConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample] = (),
    log_path=None,
    dump_dir=None,
    progress=None,
) -> TrainResult:
    """Train a regressor; epoch 0 of the log is the untouched initial model."""
    from ..metrics import evaluate

    if not train_set:
        raise ValueError("empty training set")
    comps, targets = dataset_arrays(train_set, np.float32)
    if comps.shape[1] != config.n_components:
        raise ValueError(f"{config.layout} expects {config.n_components} components, data has {comps.shape[1]}")
    if comps.shape[-1] != config.input_size:
        raise ValueError(f"data is {comps.shape[-1]}px, config says {config.input_size}px")

    model = initial_model(config)
    weights = config.effective_weights()
    rng = SplitMix64(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    n = comps.shape[0]
    log: List[EpochLog] = []
    sink = open(log_path, "w", encoding="utf-8") if log_path else None

    def record(entry: EpochLog):
        log.append(entry)
        if sink:
            sink.write(entry.to_json() + "\n")
            sink.flush()
        if progress:
            progress(entry)

    try:
        init_loss = _dataset_loss(model, comps, targets, weights, config.batch_size)
        val = evaluate(model, val_set).mean_mae if val_set else None
        record(EpochLog(0, config.lr_at(0), init_loss, val))
        lr = config.lr_at(0)
        for epoch in range(config.epochs):
            lr = config.lr_at(epoch)
            order = shuffle(range(n), rng)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                bc, bt = comps[idx], targets[idx]
                if config.flip:
                    flips = np.array([rng.below(2) for _ in idx], dtype=bool)
                    bc = np.where(flips[:, None, None, None], bc[..., ::-1], bc)
                    bt = np.where(flips[:, None, None], bt[..., ::-1], bt)
                loss, grads = batch_loss(model, bc, bt, weights)
                if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    dump = _dump_batch(dump_dir, epoch + 1, idx, bc, bt) if dump_dir else None
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch + 1}, batch starting {start} (lr={lr:g})"
                        + (f"; batch saved to {dump}" if dump else ""),
                        dump,
                    )
                total += loss * len(idx)
                for name, g in grads.items():
                    v = velocity[name]
                    v *= config.momentum
                    v += g
                    model.params[name] -= lr * v
            val = evaluate(model, val_set).mean_mae if val_set else None
            record(EpochLog(epoch + 1, lr, total / n, val))
    finally:
        if sink:
            sink.close()

    ckpt = Checkpoint(model, config.epochs, lr if config.epochs else None, rng.state, config.to_dict())
    return TrainResult(ckpt, log)


def _dataset_loss(model, comps, targets, weights, batch_size) -> float:
    total = 0.0
    for start in range(0, comps.shape[0], batch_size):
        loss, _ = batch_loss(model, comps[start:start + batch_size], targets[start:start + batch_size], weights, grads=False)
        total += loss * min(batch_size, comps.shape[0] - start)
    return total / comps.shape[0]


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
