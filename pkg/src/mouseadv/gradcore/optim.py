from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .layers import Param


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    """Adam with bias correction and an epoch-wise step decay of the rate."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_every: int = 15
    decay_factor: float = 0.5
    step: int = 0
    epoch: int = 0
    base_lr: float = field(default=None)  # type: ignore[assignment]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.base_lr is None:
            self.base_lr = self.lr

    def lr_at(self, epoch: int) -> float:
        if not self.decay_every:
            return self.base_lr
        return self.base_lr * self.decay_factor ** (epoch // self.decay_every)

    def end_epoch(self) -> None:
        self.epoch += 1
        self.lr = self.lr_at(self.epoch)


def adam_step(state: AdamState, params: Mapping[str, Param]) -> None:
    """Apply one Adam update in place using each param's ``grad``."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for name, p in params.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad**2
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(params: Mapping[str, Param], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((p.grad**2).sum()) for p in params.values())))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params.values():
            p.grad *= s
    return total


def zero_grads(params: Mapping[str, Param]) -> None:
    for p in params.values():
        p.zero_grad()
