"""SGD with momentum, Adam and cosine annealing, written against Parameter roles."""
from __future__ import annotations

import contextlib
import math
from typing import Iterable, Sequence

import numpy as np

from .autograd import Parameter


def cosine_lr(epoch: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    if total == 0:
        return lr_max
    return lr_min + (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


def sgd_momentum_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                      velocity: Sequence[np.ndarray], lr: float, momentum: float,
                      weight_decay: float = 0.0):
    """In place: ``v = m*v + (g + wd*p)``; ``p -= lr*v``."""
    for p, g, v in zip(params, grads, velocity):
        d = g + weight_decay * p if weight_decay else g
        v *= momentum
        v += d
        p -= lr * v


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], m: Sequence[np.ndarray],
              v: Sequence[np.ndarray], step: int, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
    """Bias-corrected Adam; ``step`` counts from 1."""
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p, g, mi, vi in zip(params, grads, m, v):
        d = g + weight_decay * p if weight_decay else g
        mi *= beta1
        mi += (1.0 - beta1) * d
        vi *= beta2
        vi += (1.0 - beta2) * d * d
        p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


def _check_role(params, role):
    bad = [p.name for p in params if p.role != role]
    if bad:
        raise ValueError(f"optimizer for role {role!r} got parameters of another role: {bad[:3]}")


class SGD:
    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = list(params)
        _check_role(self.params, "weight")
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        sgd_momentum_step([p.data for p in self.params], [p.grad for p in self.params],
                          self.velocity, self.lr, self.momentum, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        _check_role(self.params, "alpha")
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.m, self.v,
                  self.t, self.lr, self.betas[0], self.betas[1], self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))
    if total > max_norm:
        s = max_norm / (total + 1e-6)
        for p in params:
            p.grad *= s
    return total


@contextlib.contextmanager
def frozen(params: Iterable[Parameter]):
    """Temporarily exclude ``params`` from the gradient tape."""
    params = list(params)
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True
