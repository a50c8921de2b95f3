from .gradcheck import GradReport, grad_check, numeric_grad
from .losses import LossWeights, loss_centroid, loss_inertia, loss_overlap, loss_pixel, loss_total
from .warp import warp_backward, warp_forward

__all__ = [
    "warp_forward",
    "warp_backward",
    "LossWeights",
    "loss_pixel",
    "loss_overlap",
    "loss_centroid",
    "loss_inertia",
    "loss_total",
    "grad_check",
    "numeric_grad",
    "GradReport",
]
