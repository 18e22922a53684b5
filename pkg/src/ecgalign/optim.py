"""AdamW with decoupled weight decay, plus the warmup/cosine lr schedule."""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .autodiff import Tensor


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    Defaults match the pretraining configuration (lr 2e-4, weight decay 1e-5).
    The learning rate may be overridden per step for scheduling.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4,
                 weight_decay: float = 1e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        self.step_count += 1
        eff_lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            kernels.adamw_update(p.data, grad, self._m[name], self._v[name],
                                 self.step_count, eff_lr, self.beta1,
                                 self.beta2, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adamw_step(params: dict[str, Tensor], opt: AdamW, lr: float | None = None) -> None:
    """Apply one update using gradients already accumulated on params."""
    assert params is opt.params
    opt.step(lr)


def cosine_schedule(step: int, total_steps: int, base_lr: float,
                    warmup_steps: int = 0) -> float:
    """Linear warmup to base_lr, then half-cosine decay to zero.

    step is 1-based inside training loops; step == warmup_steps returns
    base_lr exactly and step == total_steps returns 0.
    """
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    decay_span = total_steps - warmup_steps
    if decay_span <= 0:
        return base_lr
    progress = (step - warmup_steps) / decay_span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
