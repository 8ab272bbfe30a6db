"""Minimal reverse-mode autodiff engine backing the teacher and student models."""

from .tensor import Parameter, Tensor
from .optim import OptimizerConfig, adamw_step, clip_global_norm, cosine_lr
from . import ops

__all__ = [
    "Parameter",
    "Tensor",
    "OptimizerConfig",
    "adamw_step",
    "clip_global_norm",
    "cosine_lr",
    "ops",
]
