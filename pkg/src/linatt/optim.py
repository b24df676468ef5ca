"""Optimizers for the training harness: rectified Adam and Adam with warmup.

Both consume gradients left on parameters by the tape's backward pass.  The
learning-rate schedule is a callable ``step -> lr``; the default is a flat rate
with a single step drop, matching the copy-task recipe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .autodiff import Tensor


@dataclass
class StepDropSchedule:
    """Constant learning rate that drops once after ``drop_step`` updates."""

    lr: float = 1e-3
    drop_step: int = 3000
    lr_after: float = 1e-4

    def __call__(self, step: int) -> float:
        return self.lr if step <= self.drop_step else self.lr_after


@dataclass
class WarmupSchedule:
    """Linear warmup over the first ``warmup`` updates, then a wrapped schedule."""

    base: Callable[[int], float]
    warmup: int = 500

    def __call__(self, step: int) -> float:
        scale = min(1.0, step / max(1, self.warmup))
        return self.base(step) * scale


class _MomentOptimizer:
    def __init__(self, params: Iterable[Tensor], schedule, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        lr = self.schedule(self.t)
        b1t = self.beta1**self.t
        b2t = self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            p.data -= lr * self._update(m, v, b1t, b2t)

    def _update(self, m, v, b1t, b2t):
        raise NotImplementedError


class RAdam(_MomentOptimizer):
    """Rectified Adam: falls back to an unadapted momentum step while the
    variance estimate is untrustworthy (early steps), then applies the
    rectification factor to the adaptive step."""

    def __init__(self, params, schedule, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, schedule, beta1, beta2, eps)
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def _update(self, m, v, b1t, b2t):
        m_hat = m / (1 - b1t)
        rho = self.rho_inf - 2.0 * self.t * b2t / (1 - b2t)
        if rho <= 4.0:
            return m_hat
        rect = np.sqrt(
            ((rho - 4.0) * (rho - 2.0) * self.rho_inf)
            / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho)
        )
        adaptive = np.sqrt(1 - b2t) / (np.sqrt(v) + self.eps)
        return rect * m_hat * adaptive


class Adam(_MomentOptimizer):
    """Plain Adam with bias correction; pair with WarmupSchedule if desired."""

    def _update(self, m, v, b1t, b2t):
        m_hat = m / (1 - b1t)
        v_hat = v / (1 - b2t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, params, schedule):
    """Factory for the two supported optimizer switches."""
    if name == "radam":
        return RAdam(params, schedule)
    if name == "adam-warmup":
        return Adam(params, WarmupSchedule(schedule))
    from .errors import ContractViolation

    raise ContractViolation(f"unknown optimizer {name!r}, expected radam or adam-warmup")
