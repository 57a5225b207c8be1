"""AdamW with decoupled weight decay, plus the warmup-cosine LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to ``init_lr`` over ``warmup_steps``, then cosine decay to
    ``min_lr`` at ``total_steps``."""

    init_lr: float
    warmup_lr: float
    min_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not (0 < self.warmup_lr <= self.init_lr):
            raise ValueError(f"need 0 < warmup_lr <= init_lr, got "
                             f"{self.warmup_lr} vs {self.init_lr}")
        if not (0 < self.min_lr <= self.init_lr):
            raise ValueError(f"need 0 < min_lr <= init_lr, got "
                             f"{self.min_lr} vs {self.init_lr}")
        if not (0 <= self.warmup_steps < self.total_steps):
            raise ValueError(f"need 0 <= warmup_steps < total_steps, got "
                             f"{self.warmup_steps} vs {self.total_steps}")


def lr_at(sched: LrSchedule, step: int) -> float:
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    if step <= sched.warmup_steps:
        if sched.warmup_steps == 0:
            return sched.init_lr
        frac = step / sched.warmup_steps
        return sched.warmup_lr + (sched.init_lr - sched.warmup_lr) * frac
    frac = (step - sched.warmup_steps) / (sched.total_steps - sched.warmup_steps)
    return sched.min_lr + 0.5 * (sched.init_lr - sched.min_lr) * (
        1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    Decay is applied directly to the value (never folded into the moment
    estimates), so ``weight_decay=0`` reduces element-wise to plain Adam.
    """

    def __init__(self, named_params, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.items: list[tuple[str, Parameter]] = [
            (name, p) for name, p in named_params if p.trainable]
        names = [name for name, _ in self.items]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names: {sorted(names)}")
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for _, p in self.items]
        self._v = [np.zeros_like(p.data) for _, p in self.items]

    def zero_grad(self):
        for _, p in self.items:
            p.zero_grad()

    def step(self, lr: float):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for (name, p), m, v in zip(self.items, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {name}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= lr * update

    def state_dict(self) -> dict:
        state = {"step_count": self.step_count}
        for (name, _), m, v in zip(self.items, self._m, self._v):
            state[f"m.{name}"] = m.copy()
            state[f"v.{name}"] = v.copy()
        return state

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step_count"])
        for (name, _), m, v in zip(self.items, self._m, self._v):
            m[...] = state[f"m.{name}"]
            v[...] = state[f"v.{name}"]
