"""SGD with momentum, LR schedules, and the hidden-fraction LR rescale."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Model

SCHEDULERS = ("constant", "step", "cosine")


class FractionTooLarge(Exception):
    pass


class NonFiniteGradient(Exception):
    pass


@dataclass
class OptimConfig:
    base_lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    scheduler: str = "constant"
    milestones: tuple = ()
    decay: float = 0.1
    total_epochs: int = 0  # cosine horizon
    warmup_epochs: int = 0

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        ms = list(self.milestones)
        if ms != sorted(ms) or len(set(ms)) != len(ms) or (ms and ms[0] < 0):
            raise ValueError("milestones must be strictly increasing and >= 0")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if self.scheduler == "cosine" and self.total_epochs <= self.warmup_epochs:
            raise ValueError("cosine needs total_epochs > warmup_epochs")


def base_lr_at(cfg: OptimConfig, epoch: int) -> float:
    """Scheduled learning rate before any hidden-fraction adjustment.

    Warmup ramps linearly from 0: epoch e of w warmup epochs runs at
    base_lr * e / w.  After warmup, "step" multiplies by decay at each
    milestone epoch (milestones are absolute epoch numbers) and "cosine"
    follows the half-cosine from base_lr down to exactly 0 at total_epochs.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    if cfg.scheduler == "constant":
        return cfg.base_lr
    if cfg.scheduler == "step":
        passed = sum(1 for m in cfg.milestones if m <= epoch)
        return cfg.base_lr * cfg.decay**passed
    # cosine
    span = cfg.total_epochs - cfg.warmup_epochs
    t = min((epoch - cfg.warmup_epochs) / span, 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def adjusted_lr(base: float, hidden_fraction: float) -> float:
    """Rescale the LR by 1/(1 - F) so the expected step size per retained
    sample matches full-data training."""
    if not 0.0 <= hidden_fraction < 1.0:
        raise FractionTooLarge(
            f"hidden fraction must be in [0, 1), got {hidden_fraction}"
        )
    return base / (1.0 - hidden_fraction)


@dataclass
class SgdState:
    velocity: np.ndarray

    @classmethod
    def for_model(cls, model: Model) -> "SgdState":
        return cls(velocity=np.zeros_like(model.params))


def sgd_step(model: Model, grad: np.ndarray, lr: float,
             state: SgdState, cfg: OptimConfig) -> None:
    """One heavy-ball step with coupled weight decay:

        v <- momentum * v + grad + weight_decay * w
        w <- w - lr * v

    A non-finite gradient raises and leaves both w and v untouched.
    """
    if grad.shape != model.params.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.isfinite(grad).all():
        raise NonFiniteGradient("gradient contains nan/inf; step not applied")
    v = state.velocity
    v *= cfg.momentum
    v += grad
    if cfg.weight_decay:
        v += cfg.weight_decay * model.params
    model.params -= lr * v
