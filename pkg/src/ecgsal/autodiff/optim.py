"""Parameter updates."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Tensor


class SGDMomentum:
    """Heavy-ball SGD: ``v <- mu * v + g``, ``theta <- theta - lr * v``.

    Velocity buffers start at zero and are keyed by parameter identity.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 0.005, momentum: float = 0.7):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[int, np.ndarray] = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            v = self.velocity[id(p)]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v


def sgd_momentum_step(params, grads, velocity, lr: float, momentum: float):
    """Functional form of one momentum step; returns ``(params, velocity)``."""
    new_v = [momentum * v + g for v, g in zip(velocity, grads)]
    new_p = [p - lr * v for p, v in zip(params, new_v)]
    return new_p, new_v


def gradient_descent_step(m: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return m - lr * grad
