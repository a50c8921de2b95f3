"""The component affine regressor network.

A shared convolutional extractor encodes every component image, a fusion
step lets each component see the others, and an MLP regresses one 2x3
sampling affine per component.  The last MLP layer starts at zero weight
with an identity bias, so a fresh model leaves every component in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..diffops import nn
from . import fusion

IDENTITY_THETA = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
FUSION_MODES = ("stack", "adain", "attention")


def _switcher() -> np.ndarray:
    m = np.zeros((6, 6))
    for i, j in ((0, 4), (4, 0), (2, 5), (5, 2)):
        m[i, j] = 1.0
    return m


# swaps horizontal and vertical scale/translation, zeroes skew
SWITCHER = _switcher()


def apply_switcher(theta_flat) -> np.ndarray:
    return np.asarray(theta_flat) @ SWITCHER.T


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    fusion: str = "stack"
    n_components: int = 2
    channels: Tuple[int, ...] = (16, 32, 64, 128)
    hidden: int = 256
    attn_dim: int = 128
    groups: int = 8

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if self.n_components not in (2, 3):
            raise ValueError("models take 2 or 3 components")
        cells = 2 ** len(self.channels)
        if self.input_size % cells:
            raise ValueError(f"input_size must be a multiple of {cells}")

    @property
    def feature_size(self) -> int:
        return self.input_size >> len(self.channels)

    @property
    def fused_channels(self) -> int:
        c = self.channels[-1]
        if self.fusion == "stack":
            return c * self.n_components
        per = c if self.fusion == "adain" else self.attn_dim
        return per * (self.n_components - 1)

    @property
    def regressor_inputs(self) -> int:
        return self.fused_channels * self.feature_size**2


class CarModel:
    """Parameters plus forward/backward for batches of component images."""

    def __init__(self, config: Optional[ModelConfig] = None, switcher: bool = False, seed: int = 30, **kw):
        self.config = config or ModelConfig(**kw)
        self.switcher = switcher
        self.params: Dict[str, np.ndarray] = self._init_params(np.random.default_rng(seed))

    # -- construction -----------------------------------------------------

    def _init_params(self, rng) -> Dict[str, np.ndarray]:
        cfg = self.config
        p: Dict[str, np.ndarray] = {}

        def fan_in_uniform(shape, fan_in):
            # the common framework default: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        c_in = 1
        for i, c in enumerate(cfg.channels):
            p[f"conv{i}.weight"] = fan_in_uniform((c, c_in, 3, 3), c_in * 9)
            p[f"conv{i}.bias"] = np.zeros(c)
            p[f"gn{i}.scale"] = np.ones(c)
            p[f"gn{i}.shift"] = np.zeros(c)
            c_in = c
        if cfg.fusion == "attention":
            d = cfg.attn_dim
            bound = 1.0 / np.sqrt(c_in)
            for name in ("q", "k", "v"):
                p[f"attn.{name}.weight"] = rng.uniform(-bound, bound, size=(c_in, d))
                p[f"attn.{name}.bias"] = np.zeros(d)
        n_in = cfg.regressor_inputs
        p["fc1.weight"] = fan_in_uniform((n_in, cfg.hidden), n_in)
        p["fc1.bias"] = np.zeros(cfg.hidden)
        p["fc2.weight"] = fan_in_uniform((cfg.hidden, cfg.hidden), cfg.hidden)
        p["fc2.bias"] = np.zeros(cfg.hidden)
        p["fc3.weight"] = np.zeros((cfg.hidden, 6))
        p["fc3.bias"] = IDENTITY_THETA.copy()
        return p

    def copy(self) -> "CarModel":
        other = CarModel.__new__(CarModel)
        other.config = self.config
        other.switcher = self.switcher
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    # -- forward ----------------------------------------------------------

    def extract(self, images, dtype=np.float64):
        """Feature maps for ``(B, H, W)`` images -> ``(B, C, h, w)``."""
        cfg = self.config
        images = np.asarray(images, dtype=dtype)
        if images.shape[-1] != cfg.input_size or images.shape[-2] != cfg.input_size:
            raise ValueError(f"expected {cfg.input_size}px images, got {images.shape[-2:]}")
        x = images.reshape(-1, 1, cfg.input_size, cfg.input_size)
        caches = []
        for i in range(len(cfg.channels)):
            p = self._p(f"conv{i}.weight", dtype), self._p(f"conv{i}.bias", dtype)
            x, c_conv = nn.conv3x3(x, *p)
            x, c_gn = nn.groupnorm(x, self._p(f"gn{i}.scale", dtype), self._p(f"gn{i}.shift", dtype), cfg.groups)
            x, c_relu = nn.relu(x)
            x, c_pool = nn.maxpool2(x)
            caches.append((c_conv, c_gn, c_relu, c_pool))
        return x, caches

    def _p(self, name, dtype):
        v = self.params[name]
        return v if v.dtype == dtype else v.astype(dtype)

    def _fuse(self, feats, dtype):
        """``feats`` is ``(N, K, C, h, w)``; returns ``(N, K, D)`` and caches."""
        n, k = feats.shape[:2]
        mode = self.config.fusion
        fused, caches = [], []
        for i in range(k):
            others = [j for j in range(k) if j != i]
            if mode == "stack":
                parts = [feats[:, i]] + [feats[:, j] for j in others]
                caches.append(None)
            elif mode == "adain":
                outs = [fusion.fuse_adain(feats[:, i], feats[:, j]) for j in others]
                parts = [o[0] for o in outs]
                caches.append([o[1] for o in outs])
            else:
                w = [self._p(f"attn.{a}.{b}", dtype) for a in "qkv" for b in ("weight", "bias")]
                outs = [fusion.fuse_attention(feats[:, i], feats[:, j], *w) for j in others]
                parts = [o[0] for o in outs]
                caches.append([o[1] for o in outs])
            fused.append(np.concatenate(parts, axis=1).reshape(n, -1))
        return np.stack(fused, axis=1), caches

    def forward(self, images, dtype=np.float64):
        """Sampling affines for ``(N, K, H, W)`` component stacks.

        Returns ``(theta, cache)`` with ``theta`` shaped ``(N, K, 2, 3)``.
        """
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[1] != self.config.n_components:
            raise ValueError(
                f"expected (N, {self.config.n_components}, H, W) components, got {images.shape}"
            )
        n, k = images.shape[:2]
        feats, ext_caches = self.extract(images.reshape((n * k,) + images.shape[2:]), dtype)
        feats = feats.reshape((n, k) + feats.shape[1:])
        z, fuse_caches = self._fuse(feats, dtype)
        z = z.reshape(n * k, -1)
        h1, c1 = nn.dense(z, self._p("fc1.weight", dtype), self._p("fc1.bias", dtype))
        a1, r1 = nn.relu(h1)
        h2, c2 = nn.dense(a1, self._p("fc2.weight", dtype), self._p("fc2.bias", dtype))
        a2, r2 = nn.relu(h2)
        raw, c3 = nn.dense(a2, self._p("fc3.weight", dtype), self._p("fc3.bias", dtype))
        out = raw @ SWITCHER.T.astype(dtype) if self.switcher else raw
        cache = (n, k, feats.shape, ext_caches, fuse_caches, (c1, r1, c2, r2, c3), dtype)
        return out.reshape(n, k, 2, 3), cache

    def predict(self, images) -> np.ndarray:
        return self.forward(images)[0]

    # -- backward ---------------------------------------------------------

    def backward(self, d_theta, cache) -> Dict[str, np.ndarray]:
        n, k, fshape, ext_caches, fuse_caches, (c1, r1, c2, r2, c3), dtype = cache
        cfg = self.config
        grads: Dict[str, np.ndarray] = {}
        d_out = np.asarray(d_theta, dtype=dtype).reshape(n * k, 6)
        d_raw = d_out @ SWITCHER.astype(dtype) if self.switcher else d_out
        d_a2, grads["fc3.weight"], grads["fc3.bias"] = nn.dense_backward(d_raw, c3)
        (d_h2,) = nn.relu_backward(d_a2, r2)
        d_a1, grads["fc2.weight"], grads["fc2.bias"] = nn.dense_backward(d_h2, c2)
        (d_h1,) = nn.relu_backward(d_a1, r1)
        d_z, grads["fc1.weight"], grads["fc1.bias"] = nn.dense_backward(d_h1, c1)
        d_z = d_z.reshape(n, k, -1)

        c, h, w = fshape[2:]
        d_feats = np.zeros(fshape, dtype=d_z.dtype)
        if cfg.fusion == "attention":
            for name in ("q", "k", "v"):
                grads[f"attn.{name}.weight"] = np.zeros((c, cfg.attn_dim), dtype=dtype)
                grads[f"attn.{name}.bias"] = np.zeros(cfg.attn_dim, dtype=dtype)
        for i in range(k):
            others = [j for j in range(k) if j != i]
            if cfg.fusion == "stack":
                parts = d_z[:, i].reshape(n, k, c, h, w)
                d_feats[:, i] += parts[:, 0]
                for slot, j in enumerate(others, start=1):
                    d_feats[:, j] += parts[:, slot]
                continue
            per = c if cfg.fusion == "adain" else cfg.attn_dim
            parts = d_z[:, i].reshape(n, len(others), per, h, w)
            for slot, j in enumerate(others):
                if cfg.fusion == "adain":
                    ds, do = fusion.fuse_adain_backward(parts[:, slot], fuse_caches[i][slot])
                else:
                    ds, do, *dw = fusion.fuse_attention_backward(parts[:, slot], fuse_caches[i][slot])
                    for (a, b), g in zip([(a, b) for a in "qkv" for b in ("weight", "bias")], dw):
                        grads[f"attn.{a}.{b}"] += g
                d_feats[:, i] += ds
                d_feats[:, j] += do

        dx = d_feats.reshape((n * k, c, h, w))
        for i in reversed(range(len(cfg.channels))):
            c_conv, c_gn, c_relu, c_pool = ext_caches[i]
            (dx,) = nn.maxpool2_backward(dx, c_pool)
            (dx,) = nn.relu_backward(dx, c_relu)
            dx, grads[f"gn{i}.scale"], grads[f"gn{i}.shift"] = nn.groupnorm_backward(dx, c_gn)
            dx, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = nn.conv3x3_backward(dx, c_conv)
        return grads

    # -- misc -------------------------------------------------------------

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def names(self) -> List[str]:
        return list(self.params)
