"""Discrete leaky integrate-and-fire neurons with a rectangular surrogate.

Membrane update per step::

    u[t] = tau * u[t-1] * (1 - o[t-1]) + x[t]
    o[t] = spike(u[t] - v_th)

``spike`` is a strict Heaviside step in the forward pass (``spike(0) == 0``)
and a box of height ``1/width`` on ``|v| < width/2`` in the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autograd import ShapeError, Tensor, make_result


@dataclass(frozen=True)
class LifConfig:
    tau: float = 0.2
    v_th: float = 0.5
    surrogate_width: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if self.v_th <= 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if self.surrogate_width <= 0:
            raise ValueError(f"surrogate_width must be positive, got {self.surrogate_width}")


DEFAULT_LIF = LifConfig()


@dataclass
class LifState:
    u: np.ndarray
    o: np.ndarray


def spike(v):
    """Forward spike function: 1 where ``v > 0`` else 0."""
    v = np.asarray(v)
    return (v > 0).astype(v.dtype if v.dtype.kind == "f" else np.float64)


def spike_surrogate_grad(v, cfg: LifConfig = DEFAULT_LIF):
    a = cfg.surrogate_width
    v = np.asarray(v, dtype=np.float64)
    out = np.where(np.abs(v) < a / 2, 1.0 / a, 0.0)
    return float(out) if out.ndim == 0 else out


def lif_step(u_prev: np.ndarray, o_prev: np.ndarray, x: np.ndarray, cfg: LifConfig = DEFAULT_LIF):
    """One forward step on plain arrays; returns ``(u, o)``."""
    u_prev, o_prev, x = (np.asarray(a, dtype=np.float64) for a in (u_prev, o_prev, x))
    if not (u_prev.shape == o_prev.shape == x.shape):
        raise ShapeError(f"lif_step shape mismatch: u {u_prev.shape}, o {o_prev.shape}, x {x.shape}")
    u = cfg.tau * u_prev * (1.0 - o_prev) + x
    return u, spike(u - cfg.v_th)


def lif_sequence(x: Tensor, cfg: LifConfig = DEFAULT_LIF, relaxed: bool = False,
                 return_state: bool = False):
    """Run the recurrence along the last (time) axis from rest.

    With ``relaxed=True`` the Heaviside is replaced by its surrogate
    antiderivative (a clipped ramp); the backward rule is the same, so the
    relaxed forward serves as a finite-difference reference.
    """
    if x.ndim < 1:
        raise ShapeError("lif_sequence needs a time axis")
    shape = x.shape
    steps = shape[-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, steps)
    u, o = kernels.lif_forward(x2, cfg.tau, cfg.v_th, cfg.surrogate_width, relaxed)

    def bw(g):
        gx = kernels.lif_backward(np.ascontiguousarray(g, dtype=x2.dtype).reshape(-1, steps),
                                  u, o, cfg.tau, cfg.v_th, cfg.surrogate_width)
        return (gx.reshape(shape),)

    out = make_result(o.reshape(shape), (x,), bw)
    if return_state:
        return out, LifState(u=u.reshape(shape), o=o.reshape(shape))
    return out
