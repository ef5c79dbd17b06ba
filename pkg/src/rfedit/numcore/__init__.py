"""Dense tensors, reverse-mode autodiff, seeded streams and projection primitives."""

from rfedit.numcore.linalg import (
    minmax_normalize,
    orthogonal_component,
    project_onto,
    sigmoid,
    softmax,
)
from rfedit.numcore.rng import ALGORITHM, make_rng, standard_normal
from rfedit.numcore.tensor import Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "ALGORITHM",
    "Tensor",
    "as_tensor",
    "is_grad_enabled",
    "make_rng",
    "minmax_normalize",
    "no_grad",
    "orthogonal_component",
    "project_onto",
    "sigmoid",
    "softmax",
    "standard_normal",
]
