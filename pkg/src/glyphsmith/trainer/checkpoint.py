"""Checkpoint files: a magic line, one JSON header line, then raw tensors.

The payload holds every tensor in manifest order as little-endian float64,
so a save/load round trip is bit exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..car.model import CarModel, ModelConfig

MAGIC = b"GLYPHSMITH-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: CarModel
    epoch: int = 0
    final_lr: Optional[float] = None
    rng_state: Optional[int] = None
    train_config: Dict[str, Any] = field(default_factory=dict)


def _model_header(model: CarModel) -> Dict[str, Any]:
    cfg = asdict(model.config)
    cfg["channels"] = list(cfg["channels"])
    return {"config": cfg, "switcher": bool(model.switcher)}


def save_checkpoint(ckpt: Union[Checkpoint, CarModel], path) -> None:
    if isinstance(ckpt, CarModel):
        ckpt = Checkpoint(ckpt)
    model = ckpt.model
    names = model.names()
    header = {
        "version": FORMAT_VERSION,
        "model": _model_header(model),
        "train": ckpt.train_config,
        "epoch": ckpt.epoch,
        "final_lr": ckpt.final_lr,
        "rng_state": None if ckpt.rng_state is None else str(ckpt.rng_state),
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(line + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[len(MAGIC):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {header.get('version')} != {FORMAT_VERSION}")
    try:
        mh = header["model"]
        cfg = dict(mh["config"])
        cfg["channels"] = tuple(cfg["channels"])
        model = CarModel(ModelConfig(**cfg), switcher=bool(mh["switcher"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model header ({exc})") from None

    payload = memoryview(data)[end + 1:]
    offset = 0
    manifest = header.get("tensors", [])
    if [t["name"] for t in manifest] != model.names():
        raise CheckpointError(f"{path}: tensor manifest does not match the model layout")
    for t in manifest:
        name, shape = t["name"], tuple(t["shape"])
        if shape != model.params[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, model expects {model.params[name].shape}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {name}")
        model.params[name] = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")
    rng_state = header.get("rng_state")
    return Checkpoint(
        model,
        int(header.get("epoch", 0)),
        header.get("final_lr"),
        None if rng_state is None else int(rng_state),
        header.get("train") or {},
    )
