from .compose import Composition, forward_compose, iterative_compose, placement_affine, regress_affines
from .fusion import fuse_adain, fuse_attention, fuse_stack
from .model import SWITCHER, CarModel, ModelConfig, apply_switcher

__all__ = [
    "CarModel",
    "ModelConfig",
    "SWITCHER",
    "apply_switcher",
    "fuse_stack",
    "fuse_adain",
    "fuse_attention",
    "regress_affines",
    "forward_compose",
    "iterative_compose",
    "placement_affine",
    "Composition",
]
