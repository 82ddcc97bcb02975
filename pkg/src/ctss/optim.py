"""Adam with bias correction and a single-cycle cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ValidationError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter list."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """One in-place Adam update over ``params``.

    m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, then the bias-corrected
    step p <- p - lr * m_hat / (sqrt(v_hat) + eps).
    """
    _check_aligned(params, grads, state)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise NumericError("adam_step produced non-finite parameters")


def sgd_step(params: list[Tensor], grads: list[np.ndarray], lr: float) -> None:
    """Plain gradient step p <- p - lr * g (used for closed-form update checks)."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.data.shape != g.shape:
            raise DimensionError(f"grad shape {g.shape} does not match param shape {p.data.shape}")
        p.data -= lr * g
        if not np.all(np.isfinite(p.data)):
            raise NumericError("sgd_step produced non-finite parameters")


def _check_aligned(params, grads, state: AdamState) -> None:
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError(
            f"misaligned optimizer state: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment buffers"
        )
    for p, g, m in zip(params, grads, state.m):
        if p.data.shape != g.shape or p.data.shape != m.shape:
            raise DimensionError(
                f"shape mismatch: param {p.data.shape}, grad {g.shape}, moment {m.shape}"
            )


@dataclass(frozen=True)
class CosineSchedule:
    """Single-cycle cosine annealing from base_lr at t=0 to min_lr at t=total_epochs."""

    base_lr: float = 0.01
    min_lr: float = 0.0
    total_epochs: int = 1

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValidationError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.base_lr < self.min_lr:
            raise ValidationError(f"base_lr {self.base_lr} must be >= min_lr {self.min_lr}")


def cosine_lr(t: int, sched: CosineSchedule) -> float:
    """Learning rate at integer epoch index t in [0, total_epochs]."""
    if t < 0 or t > sched.total_epochs:
        raise ValidationError(f"epoch index {t} outside [0, {sched.total_epochs}]")
    span = sched.base_lr - sched.min_lr
    return sched.min_lr + span * (1.0 + math.cos(math.pi * t / sched.total_epochs)) / 2.0
