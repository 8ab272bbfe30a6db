"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, TrainingDiverged


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-3
    min_lr: float = 1e-6
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs: int = 200
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.min_lr <= self.base_lr):
            raise ConfigError(f"need 0 < min_lr <= base_lr, got {self.min_lr}, {self.base_lr}")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


def cosine_lr(step, total_steps, config):
    """Cosine annealing from base_lr (step 0) down to min_lr (step == total)."""
    if total_steps <= 0:
        return config.min_lr
    t = min(max(step, 0), total_steps) / total_steps
    return config.min_lr + 0.5 * (config.base_lr - config.min_lr) * (
        1.0 + math.cos(math.pi * t)
    )


def adamw_step(params, config, step_index, lr=None):
    """One AdamW update over all parameters that received gradients.

    Weight decay is decoupled: applied directly to the weights from the
    pre-update value, never routed through the moment estimates. step_index
    is 1-based and drives the bias correction.
    """
    if lr is None:
        lr = config.base_lr
    beta1, beta2 = config.betas
    bc1 = 1.0 - beta1**step_index
    bc2 = 1.0 - beta2**step_index
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {p.name!r}")
        decay = lr * config.weight_decay * p.tensor.data if config.weight_decay else None
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(p.v / bc2)
        denom += config.eps
        p.tensor.data -= (lr / bc1) * p.m / denom
        if decay is not None:
            p.tensor.data -= decay


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.tensor.grad is not None:
            total += float(np.sum(p.tensor.grad * p.tensor.grad))
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad *= factor
    return norm
