"""SGD-with-momentum and Adam over named parameter dicts.

Optimizers keep per-parameter moment buffers keyed by name, so the same
instance can persist across communication rounds while the surrounding
model objects are reloaded.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


class SgdMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, Tensor], lr: float | None = None):
        rate = self.lr if lr is None else lr
        self.step_count += 1
        for name, p in params.items():
            if p.grad is None:
                raise ValueError(f"missing gradient for trainable parameter {name!r}")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = self.momentum * v + p.grad
            self.velocity[name] = v
            p.data -= rate * v


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, Tensor], lr: float | None = None):
        rate = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            if p.grad is None:
                raise ValueError(f"missing gradient for trainable parameter {name!r}")
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1 - self.beta1) * p.grad
            v = self.beta2 * v + (1 - self.beta2) * p.grad ** 2
            self.m[name] = m
            self.v[name] = v
            p.data -= rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind: str, lr: float, momentum: float = 0.9):
    if kind == "sgd_momentum":
        return SgdMomentum(lr, momentum)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")
