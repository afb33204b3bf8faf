"""Small module system: parameter containers with deterministic naming."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .autograd import Parameter, Tensor


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    training = True
    _buffer_names: tuple = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self, role: Optional[str] = None) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if role is None or p.role == role]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in self._buffer_names:
            yield f"{prefix}{key}", getattr(self, key)
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    """Bias-free convolution applied per time slice."""

    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, dilation=1, groups=1,
                 dtype=np.float32):
        kh, kw = (k, k) if isinstance(k, int) else k
        fan_in = (c_in // groups) * kh * kw
        self.weight = Parameter(fan_in_uniform(rng, (c_out, c_in // groups, kh, kw), fan_in, dtype),
                                name="weight")
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.stride, self.padding, self.dilation, self.groups)


class BatchNorm(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, affine=True, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype=dtype), name="gamma") if affine else None
        self.beta = Parameter(np.zeros(channels, dtype=dtype), name="beta") if affine else None
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, f_in, f_out, rng, bias=True, dtype=np.float32):
        self.weight = Parameter(fan_in_uniform(rng, (f_out, f_in), f_in, dtype), name="weight")
        self.bias = Parameter(fan_in_uniform(rng, (f_out,), f_in, dtype), name="bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)
