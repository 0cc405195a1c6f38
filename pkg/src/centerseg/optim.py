"""Adam with bias correction and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def cosine_schedule(step: int, total_steps: int, base_lr: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray | None],
    state: list[AdamState],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update. A ``None`` gradient counts as zero."""
    b1, b2 = betas
    for p, g, s in zip(params, grads, state):
        if s.m.shape != p.data.shape:
            raise ValueError(f"optimizer state shape {s.m.shape} != param {p.data.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        s.t += 1
        s.m = b1 * s.m + (1 - b1) * g
        s.v = b2 * s.v + (1 - b2) * g * g
        mhat = s.m / (1 - b1**s.t)
        vhat = s.v / (1 - b2**s.t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class ParamGroup:
    name: str
    params: list[Tensor]
    base_lr: float
    state: list[AdamState] = field(default_factory=list)

    def __post_init__(self):
        if not self.state:
            self.state = [AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params]


class Adam:
    """Adam over named parameter groups, each with its own cosine-scheduled lr."""

    def __init__(self, groups: list[ParamGroup], total_steps: int,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.groups = groups
        self.total_steps = total_steps
        self.betas = betas
        self.eps = eps
        self.step_count = 0

    def current_lrs(self) -> dict[str, float]:
        step = min(self.step_count, self.total_steps)
        return {g.name: cosine_schedule(step, self.total_steps, g.base_lr) for g in self.groups}

    def step(self) -> dict[str, float]:
        lrs = self.current_lrs()
        for g in self.groups:
            adam_step(g.params, [p.grad for p in g.params], g.state, lrs[g.name], self.betas, self.eps)
        self.step_count += 1
        return lrs

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g.params:
                p.grad = None
