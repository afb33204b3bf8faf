"""Channel-temporal and spatial attention over (N, C, H, W, T) maps.

Two variants rescale a feature map by learned weights in (0, 1):

* ``ct``: ECA-style. Spatial average pooling, a single-channel convolution
  over the channel x time plane, sigmoid.
* ``ma``: CBAM-style. A shared two-layer MLP over the spatially pooled
  (avg and max) channel-time vector, then a spatial map from a 2-channel
  convolution of the channel-pooled (max, avg) maps.
"""
from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .autograd import Parameter, Tensor
from .nn import Module, fan_in_uniform


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    t = int(math.floor(math.log2(channels) / gamma + b / gamma))
    k = t if t % 2 else t + 1
    return max(k, 1)


def temporal_kernel_size(steps: int) -> int:
    # even kernels have no centred "same" padding
    return 3 if steps >= 3 else 1


class CtAttentionParams(Module):
    def __init__(self, channels: int, steps: int, rng: np.random.Generator, dtype=np.float32):
        self.k_c = eca_kernel_size(channels)
        self.k_t = temporal_kernel_size(steps)
        self.conv_kernel = Parameter(
            fan_in_uniform(rng, (1, 1, self.k_c, self.k_t), self.k_c * self.k_t, dtype),
            name="conv_kernel")

    def forward(self, x: Tensor) -> Tensor:
        return ct_attention(x, self)


class MaAttentionParams(Module):
    def __init__(self, channels: int, steps: int, rng: np.random.Generator, reduction: int = 4,
                 spatial_kernel: int = 7, dtype=np.float32):
        if reduction < 1:
            raise ValueError("reduction ratio must be >= 1")
        if spatial_kernel % 2 == 0:
            raise ValueError("spatial kernel size must be odd")
        ct = channels * steps
        hidden = -(-ct // reduction)
        self.mlp_w1 = Parameter(fan_in_uniform(rng, (hidden, ct), ct, dtype), name="mlp_w1")
        self.mlp_w2 = Parameter(fan_in_uniform(rng, (ct, hidden), hidden, dtype), name="mlp_w2")
        self.spatial_kernel = Parameter(
            fan_in_uniform(rng, (1, 2, spatial_kernel, spatial_kernel), 2 * spatial_kernel ** 2, dtype),
            name="spatial_kernel")

    def forward(self, x: Tensor) -> Tensor:
        return ma_attention(x, self)


def ct_weights(x: Tensor, params: CtAttentionParams) -> Tensor:
    F._check5(x)
    n, c, _, _, t = x.shape
    pooled = F.reduce_pool(x, ("H", "W"), "avg")
    plane = F.reshape(pooled, (n, 1, c, t, 1))
    kc, kt = params.conv_kernel.shape[2:]
    mixed = F.conv2d(plane, params.conv_kernel, padding=(kc // 2, kt // 2))
    return F.sigmoid(F.reshape(mixed, (n, c, 1, 1, t)))


def ct_attention(x: Tensor, params: CtAttentionParams) -> Tensor:
    return F.mul(x, ct_weights(x, params))


def _mlp(v: Tensor, params: MaAttentionParams) -> Tensor:
    return F.linear(F.relu(F.linear(v, params.mlp_w1)), params.mlp_w2)


def ma_ct_weights(x: Tensor, params: MaAttentionParams) -> Tensor:
    F._check5(x)
    n, c, _, _, t = x.shape
    avg = F.reshape(F.reduce_pool(x, ("H", "W"), "avg"), (n, c * t))
    mx = F.reshape(F.reduce_pool(x, ("H", "W"), "max"), (n, c * t))
    s = F.add(_mlp(avg, params), _mlp(mx, params))
    return F.sigmoid(F.reshape(s, (n, c, 1, 1, t)))


def ma_ct_attention(x: Tensor, params: MaAttentionParams) -> Tensor:
    return F.mul(x, ma_ct_weights(x, params))


def ma_spatial_weights(x: Tensor, params: MaAttentionParams) -> Tensor:
    F._check5(x)
    pooled = F.concat([F.reduce_pool(x, ("C",), "max"), F.reduce_pool(x, ("C",), "avg")], axis=1)
    k = params.spatial_kernel.shape[2]
    return F.sigmoid(F.conv2d(pooled, params.spatial_kernel, padding=k // 2))


def ma_spatial_attention(x: Tensor, params: MaAttentionParams) -> Tensor:
    return F.mul(x, ma_spatial_weights(x, params))


def ma_attention(x: Tensor, params: MaAttentionParams) -> Tensor:
    return ma_spatial_attention(ma_ct_attention(x, params), params)


def make_attention(mode: str, channels: int, steps: int, rng, dtype=np.float32, **kw):
    """Return the attention module for ``mode`` in {'off', 'ct', 'ma'} (None for off)."""
    if mode == "off":
        return None
    if mode == "ct":
        return CtAttentionParams(channels, steps, rng, dtype=dtype)
    if mode == "ma":
        return MaAttentionParams(channels, steps, rng, dtype=dtype, **kw)
    raise ValueError(f"attention mode must be 'off', 'ct' or 'ma', got {mode!r}")
