"""Finite-difference verification of every differentiable primitive.

Each check projects the op output onto a fixed random direction, so the
scalar ``sum(out * r)`` has a gradient that exercises every output element.
Spiking paths use the relaxed (clipped-ramp) forward, whose exact derivative
is the rectangular surrogate the backward pass applies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .attention import CtAttentionParams, MaAttentionParams
from .autograd import Tensor
from .spiking import DEFAULT_LIF, lif_sequence
from .supernet import MixedEdge, Source

TOL_PRIMITIVE = 1e-4
TOL_COMPOSITE = 1e-3
# wide probes keep cancellation error small; ops with kinks (relu, max,
# clipped ramp) additionally run the kink guard
EPS = 1e-4


def finite_diff_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                      rng: Optional[np.random.Generator] = None, floor: float = 1e-8,
                      kink_guard: bool = False, fine_eps: float = 1e-7) -> float:
    """Max over input elements of ``|a - n| / max(|a|, |n|, floor)``.

    ``fn`` is re-evaluated with each input element nudged by ``+-eps``
    (central differences); ``a`` is the reverse-mode gradient.

    With ``kink_guard`` each element is also probed at ``eps/2``. On smooth
    stretches the two estimates agree to O(eps^2) and their Richardson
    combination is used; a disagreement means a kink (relu, max, clip) lies
    inside the probe, and the element is re-probed at ``fine_eps``.
    """
    rng = rng or np.random.default_rng(0)
    out = fn()
    r = rng.standard_normal(out.shape)

    def scalar():
        return float(np.sum(fn().data * r))

    for t in inputs:
        t.grad = np.zeros_like(t.data)
    out.backward(r.astype(out.dtype))
    worst = 0.0
    for t in inputs:
        a = t.grad.copy()
        flat = t.data.reshape(-1)
        num = np.empty(flat.size)

        def central(i, h):
            keep = flat[i]
            flat[i] = keep + h
            fp = scalar()
            flat[i] = keep - h
            fm = scalar()
            flat[i] = keep
            return (fp - fm) / (2 * h)

        for i in range(flat.size):
            d1 = central(i, eps)
            if not kink_guard:
                num[i] = d1
                continue
            d2 = central(i, eps / 2)
            if abs(d1 - d2) <= 1e-7 + 1e-6 * abs(d2):
                num[i] = (4 * d2 - d1) / 3
            else:
                num[i] = central(i, fine_eps)
        a = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        worst = max(worst, float(np.max(np.abs(a - num) / denom)))
    return worst


def _t(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


# each builder returns (fn, inputs)
def _conv_dense(rng):
    stride, dil = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    x, k = _t(rng, (2, 3, 5, 5, 2)), _t(rng, (4, 3, 3, 3))
    return (lambda: F.conv2d(x, k, stride=stride, padding=dil, dilation=dil)), [x, k]


def _conv_depthwise(rng):
    stride, dil = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    ks = int(rng.choice([3, 5]))
    x, k = _t(rng, (2, 3, 6, 6, 2)), _t(rng, (3, 1, ks, ks))
    return (lambda: F.conv2d(x, k, stride=stride, padding=dil * (ks // 2), dilation=dil,
                             groups=3)), [x, k]


def _conv_pointwise(rng):
    stride = int(rng.integers(1, 3))
    x, k = _t(rng, (2, 4, 4, 4, 2)), _t(rng, (3, 4, 1, 1))
    return (lambda: F.conv2d(x, k, stride=stride)), [x, k]


def _conv_grouped(rng):
    x, k = _t(rng, (2, 4, 4, 4, 2)), _t(rng, (4, 2, 3, 3))
    return (lambda: F.conv2d(x, k, padding=1, groups=2)), [x, k]


def _pool_avg(rng):
    stride = int(rng.integers(1, 3))
    x = _t(rng, (2, 2, 5, 5, 2))
    return (lambda: F.pool2d(x, "avg", 3, stride, 1)), [x]


def _linear(rng):
    x, w, b = _t(rng, (3, 5)), _t(rng, (4, 5)), _t(rng, (4,))
    return (lambda: F.linear(x, w, b)), [x, w, b]


def _sigmoid(rng):
    x = _t(rng, (3, 7), 3.0)
    return (lambda: F.sigmoid(x)), [x]


def _softmax(rng):
    x = _t(rng, (3, 8), 2.0)
    return (lambda: F.softmax_over(x, axis=1)), [x]


def _batchnorm(rng):
    x = _t(rng, (3, 2, 3, 3, 2), 2.0)
    g, b = _t(rng, (2,)), _t(rng, (2,))
    rm, rv = np.zeros(2), np.ones(2)
    return (lambda: F.batchnorm(x, g, b, rm, rv, training=True)), [x, g, b]


def _cross_entropy(rng):
    x = _t(rng, (5, 4), 2.0)
    y = rng.integers(0, 4, 5)
    return (lambda: F.cross_entropy(x, y)), [x]


def _ct_attention(rng):
    steps = int(rng.choice([2, 4]))
    p = CtAttentionParams(8, steps, rng, dtype=np.float64)
    x = _t(rng, (2, 8, 3, 3, steps))
    return (lambda: p(x)), [x, p.conv_kernel]


def _ma_attention(rng):
    p = MaAttentionParams(4, 2, rng, reduction=4, spatial_kernel=3, dtype=np.float64)
    x = _t(rng, (2, 4, 4, 4, 2))
    return (lambda: p(x)), [x, p.mlp_w1, p.mlp_w2, p.spatial_kernel]


def _mixed_edge_alpha(rng):
    stride = int(rng.integers(1, 3))
    edge = MixedEdge(3, stride, rng, np.float64)
    x = Tensor(rng.standard_normal((2, 3, 5, 5, 2)))
    alpha = _t(rng, (1, 8), 0.5)

    def fn():
        src = Source(x, DEFAULT_LIF, None, 0)
        return edge(src, F.softmax_over(alpha, axis=1), 0)
    return fn, [alpha]


def _lif_relaxed(rng):
    x = _t(rng, (2, 3, 2, 2, 4), 0.6)
    x.data += 0.3
    return (lambda: lif_sequence(x, relaxed=True)), [x]


def _spiking_block(rng):
    """Conv, batchnorm, relaxed LIF, conv, relaxed LIF: the shape of a cell edge."""
    x = _t(rng, (2, 2, 4, 4, 2))
    k1, k2 = _t(rng, (3, 2, 3, 3), 0.5), _t(rng, (3, 1, 3, 3), 0.5)
    g, b = _t(rng, (3,)), _t(rng, (3,))
    rm, rv = np.zeros(3), np.ones(3)

    def fn():
        h = F.batchnorm(F.conv2d(x, k1, padding=1), g, b, rm, rv, training=True)
        h = lif_sequence(h, relaxed=True)
        return lif_sequence(F.conv2d(h, k2, padding=1, groups=3), relaxed=True)
    return fn, [x, k1, k2, g, b]


PRIMITIVES: Dict[str, Tuple[Callable, float, bool]] = {
    "conv2d_dense": (_conv_dense, TOL_PRIMITIVE, False),
    "conv2d_depthwise": (_conv_depthwise, TOL_PRIMITIVE, False),
    "conv2d_pointwise": (_conv_pointwise, TOL_PRIMITIVE, False),
    "conv2d_grouped": (_conv_grouped, TOL_PRIMITIVE, False),
    "pool2d_avg": (_pool_avg, TOL_PRIMITIVE, False),
    "linear": (_linear, TOL_PRIMITIVE, False),
    "sigmoid": (_sigmoid, TOL_PRIMITIVE, False),
    "softmax": (_softmax, TOL_PRIMITIVE, False),
    "batchnorm": (_batchnorm, TOL_PRIMITIVE, False),
    "cross_entropy": (_cross_entropy, TOL_PRIMITIVE, False),
    "ct_attention": (_ct_attention, TOL_PRIMITIVE, False),
    "ma_attention": (_ma_attention, TOL_PRIMITIVE, True),
    "mixed_edge_alpha": (_mixed_edge_alpha, TOL_PRIMITIVE, False),
    "lif_relaxed": (_lif_relaxed, TOL_COMPOSITE, True),
    "spiking_block": (_spiking_block, TOL_COMPOSITE, True),
}


@dataclass
class GradcheckRow:
    primitive: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def run_suite(instances: int = 100, seed: int = 0,
              names: Optional[Sequence[str]] = None) -> List[GradcheckRow]:
    rows = []
    for name in names or PRIMITIVES:
        idx = list(PRIMITIVES).index(name)
        build, tol, kinked = PRIMITIVES[name]
        worst = 0.0
        for i in range(instances):
            rng = np.random.default_rng([seed, idx, i])
            fn, inputs = build(rng)
            worst = max(worst, finite_diff_check(fn, inputs, eps=EPS, rng=rng, kink_guard=kinked))
        rows.append(GradcheckRow(name, instances, worst, tol))
    return rows


def format_table(rows: Sequence[GradcheckRow]) -> str:
    lines = ["primitive,instances,max_rel_error,tolerance,status"]
    for r in rows:
        lines.append(f"{r.primitive},{r.instances},{r.max_rel_error:.3e},{r.tolerance:.0e},"
                     f"{'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
