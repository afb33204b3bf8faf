"""Differentiable primitives over :class:`~snnas.autograd.Tensor`.

Spatial ops (convolution, pooling) act on every time slice independently
with shared weights. Binary elementwise ops broadcast size-1 axes only.
"""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .autograd import Parameter, ShapeError, Tensor, make_result

AXIS = {"N": 0, "C": 1, "H": 2, "W": 3, "T": 4}


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _check5(x: Tensor, what: str = "x"):
    if x.ndim != 5:
        raise ShapeError(f"{what} must be 5-D (N, C, H, W, T), got shape {x.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_shape(a, b):
    if len(a) != len(b):
        raise ShapeError(f"rank mismatch: {a} vs {b}")
    out = []
    for i, (p, q) in enumerate(zip(a, b)):
        if p != q and p != 1 and q != 1:
            raise ShapeError(f"cannot broadcast axis {i}: {p} vs {q} (shapes {a}, {b})")
        out.append(max(p, q))
    return tuple(out)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors as a single tape node."""
    if len(xs) == 1:
        return xs[0]
    out = xs[0].data.copy()
    for x in xs[1:]:
        if x.shape != out.shape:
            raise ShapeError(f"add_n shape mismatch: {x.shape} vs {out.shape}")
        out += x.data
    return make_result(out, tuple(xs), lambda g: (g,) * len(xs))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result(ad * bd, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    y[~pos] = ez / (1.0 + ez)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def pointwise(x: Tensor, f: str, other: Optional[Tensor] = None, c: float = 1.0) -> Tensor:
    """Dispatch by name: ``sigmoid``, ``relu``, ``add``, ``mul`` or ``scale``."""
    if f == "sigmoid":
        return sigmoid(x)
    if f == "relu":
        return relu(x)
    if f == "add":
        return add(x, other)
    if f == "mul":
        return mul(x, other)
    if f == "scale":
        return scale(x, c)
    raise ValueError(f"unknown pointwise op {f!r}")


# ---------------------------------------------------------------- reductions / shape

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                       lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_axes(x: Tensor, axes: Sequence[int], keepdims: bool = False) -> Tensor:
    axes = tuple(sorted(axes))
    count = int(np.prod([x.shape[a] for a in axes]))
    shape = x.shape
    out = x.data.mean(axis=axes, keepdims=keepdims)
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
    inv = x.dtype.type(1.0 / count)

    def bw(g):
        return (np.broadcast_to(g.reshape(kshape) * inv, shape).copy(),)

    return make_result(out, (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [x.shape[axis] for x in xs]
    for x in xs[1:]:
        ref = list(xs[0].shape)
        cur = list(x.shape)
        ref[axis] = cur[axis] = 0
        if ref != cur:
            raise ShapeError(f"concat shape mismatch off axis {axis}: {xs[0].shape} vs {x.shape}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return make_result(out, tuple(xs), bw)


def repeat_time(x: Tensor, steps: int) -> Tensor:
    """Broadcast a single-step map (N, C, H, W, 1) over ``steps`` time steps."""
    _check5(x)
    if x.shape[4] != 1:
        raise ShapeError(f"repeat_time expects T=1, got shape {x.shape}")
    out = np.repeat(x.data, steps, axis=4)
    return make_result(out, (x,), lambda g: (g.sum(axis=4, keepdims=True),))


def softmax_over(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), bw)


def mix(ys: Sequence[Optional[Tensor]], weights: Tensor, row: int) -> Tensor:
    """``sum_k weights[row, k] * ys[k]``; ``None`` entries are exact zeros."""
    present = [(k, y) for k, y in enumerate(ys) if y is not None]
    if not present:
        raise ShapeError("mix needs at least one non-zero operand")
    out = np.zeros_like(present[0][1].data)
    w = weights.data[row].astype(out.dtype)
    for k, y in present:
        out += w[k] * y.data
    parents = tuple(y for _, y in present) + (weights,)

    def bw(g):
        grads = [g * w[k] if y.requires_grad else None for k, y in present]
        gw = None
        if weights.requires_grad:
            gw = np.zeros_like(weights.data)
            for k, y in present:
                gw[row, k] = np.vdot(g, y.data)
        return tuple(grads) + (gw,)

    return make_result(out, parents, bw)


# ---------------------------------------------------------------- convolution

def _conv_out(size, k, stride, pad, dilation):
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _span(start, count, step):
    return slice(start, start + step * (count - 1) + 1, step)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding=0, dilation: int = 1,
           groups: int = 1) -> Tensor:
    """2-D convolution applied to every time slice with one shared kernel.

    ``kernel`` has shape (C_out, C_in // groups, kh, kw). No bias.
    """
    _check5(x)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be 4-D (C_out, C_in/groups, kh, kw), got {kernel.shape}")
    n, c, h, w, t = x.shape
    o, cg, kh, kw = kernel.shape
    if c % groups or o % groups:
        raise ShapeError(f"channels C_in={c}, C_out={o} not divisible by groups={groups}")
    if cg != c // groups:
        raise ShapeError(f"kernel axis 1 is {cg}, expected C_in/groups = {c // groups}")
    ph, pw = _pair(padding)
    oh = _conv_out(h, kh, stride, ph, dilation)
    ow = _conv_out(w, kw, stride, pw, dilation)
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {kh}x{kw} (dilation {dilation}) exceeds padded input {h + 2 * ph}x{w + 2 * pw}")
    if groups == c and o == c:
        return _conv_depthwise(x, kernel, stride, ph, pw, dilation, oh, ow)
    if groups == 1 and kh == 1 and kw == 1 and ph == 0 and pw == 0:
        return _conv_pointwise(x, kernel, stride, oh, ow)
    if groups == 1:
        return _conv_dense(x, kernel, stride, ph, pw, dilation, oh, ow)
    parts = []
    for gi in range(groups):
        xs = _channel_slice(x, gi * cg, (gi + 1) * cg)
        ks = _channel_slice(kernel, gi * (o // groups), (gi + 1) * (o // groups), axis=0)
        parts.append(_conv_dense(xs, ks, stride, ph, pw, dilation, oh, ow))
    return concat(parts, axis=1)


def _channel_slice(x: Tensor, lo: int, hi: int, axis: int = 1) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(lo, hi)
    idx = tuple(idx)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return make_result(np.ascontiguousarray(x.data[idx]), (x,), bw)


def _conv_depthwise(x, kernel, stride, ph, pw, dilation, oh, ow):
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(kernel.data[:, 0], dtype=xd.dtype)
    out = kernels.dwconv_forward(xd, kd, stride, ph, pw, dilation, oh, ow)

    def bw(g):
        gx, gk = kernels.dwconv_backward(np.ascontiguousarray(g, dtype=xd.dtype), xd, kd,
                                         stride, ph, pw, dilation)
        return gx, gk[:, None].astype(kernel.dtype)

    return make_result(out, (x, kernel), bw)


def _conv_pointwise(x, kernel, stride, oh, ow):
    n, c, h, w, t = x.shape
    o = kernel.shape[0]
    xs = x.data if stride == 1 else x.data[:, :, ::stride, ::stride, :]
    xs = np.ascontiguousarray(xs).reshape(n, c, -1)
    k2 = kernel.data.reshape(o, c).astype(xs.dtype, copy=False)
    out = np.matmul(k2, xs).reshape(n, o, oh, ow, t)

    def bw(g):
        g3 = g.reshape(n, o, -1)
        gk = np.tensordot(g3, xs, axes=([0, 2], [0, 2])).reshape(kernel.shape).astype(kernel.dtype)
        gx = None
        if x.requires_grad:
            gxs = np.matmul(k2.T, g3).reshape(n, c, oh, ow, t)
            if stride == 1:
                gx = gxs
            else:
                gx = np.zeros(x.shape, dtype=g.dtype)
                gx[:, :, ::stride, ::stride, :] = gxs
        return gx, gk

    return make_result(out, (x, kernel), bw)


def _conv_dense(x, kernel, stride, ph, pw, dilation, oh, ow):
    n, c, h, w, t = x.shape
    o, _, kh, kw = kernel.shape
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((n, c, kh, kw, oh, ow, t), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, _span(i * dilation, oh, stride), _span(j * dilation, ow, stride), :]
    cols = cols.reshape(n, c * kh * kw, oh * ow * t)
    k2 = kernel.data.reshape(o, -1).astype(x.dtype, copy=False)
    out = np.matmul(k2, cols).reshape(n, o, oh, ow, t)

    def bw(g):
        g3 = g.reshape(n, o, -1)
        gk = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape).astype(kernel.dtype)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(k2.T, g3).reshape(n, c, kh, kw, oh, ow, t)
            gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw, t), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, _span(i * dilation, oh, stride), _span(j * dilation, ow, stride), :] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + w, :]
        return gx, gk

    return make_result(out, (x, kernel), bw)


# ---------------------------------------------------------------- pooling

def pool2d(x: Tensor, kind: str, window: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Sliding-window max or average pooling per channel and time slice.

    Average pooling divides by ``window**2`` (padding counts as zeros). Max
    pooling routes the gradient to the first maximal element in scan order.
    """
    _check5(x)
    if window < 1:
        raise ShapeError(f"window must be >= 1, got {window}")
    n, c, h, w, t = x.shape
    if window > h + 2 * padding or window > w + 2 * padding:
        raise ShapeError(f"window {window} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    oh = _conv_out(h, window, stride, padding, 1)
    ow = _conv_out(w, window, stride, padding, 1)
    xd = np.ascontiguousarray(x.data)
    if kind == "max":
        out, idx = kernels.maxpool_forward(xd, window, stride, padding, oh, ow)
        return make_result(out, (x,), lambda g: (kernels.maxpool_backward(
            np.ascontiguousarray(g, dtype=xd.dtype), idx, h, w),))
    if kind == "avg":
        out = kernels.avgpool_forward(xd, window, stride, padding, oh, ow)
        return make_result(out, (x,), lambda g: (kernels.avgpool_backward(
            np.ascontiguousarray(g, dtype=xd.dtype), h, w, window, stride, padding),))
    raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")


def _axes(axes: Iterable) -> tuple:
    out = []
    for a in axes:
        out.append(AXIS[a] if isinstance(a, str) else int(a))
    if not out:
        raise ShapeError("reduce_pool needs at least one axis")
    return tuple(sorted(set(out)))


def reduce_pool(x: Tensor, axes: Iterable, kind: str) -> Tensor:
    """Global max/avg over the named axes; reduced axes keep size 1."""
    _check5(x)
    ax = _axes(axes)
    if 0 in ax:
        raise ShapeError("reduce_pool cannot reduce the batch axis")
    if kind == "avg":
        return mean_axes(x, ax, keepdims=True)
    if kind != "max":
        raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
    keep = [i for i in range(5) if i not in ax]
    perm = keep + list(ax)
    moved = np.transpose(x.data, perm)
    kshape = moved.shape[:len(keep)]
    flat = moved.reshape(kshape + (-1,))
    idx = flat.argmax(axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out_shape = tuple(1 if i in ax else s for i, s in enumerate(x.shape))
    inv = np.argsort(perm)

    def bw(g):
        gflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gflat, idx[..., None], g.reshape(kshape + (1,)), axis=-1)
        return (np.transpose(gflat.reshape(moved.shape), inv),)

    return make_result(vals.reshape(out_shape), (x,), bw)


# ---------------------------------------------------------------- dense layers

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map on ``x`` flattened to (N, F); ``weight`` is (out, F)."""
    n = x.shape[0]
    x2 = x.data.reshape(n, -1)
    if weight.ndim != 2 or weight.shape[1] != x2.shape[1]:
        raise ShapeError(f"linear: input has F={x2.shape[1]} features, weight shape {weight.shape}")
    out = x2 @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape}, expected ({weight.shape[0]},)")
        out = out + bias.data
    xshape = x.shape
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = (g @ weight.data).reshape(xshape) if x.requires_grad else None
        gw = g.T @ x2
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result(out, parents, bw)


def batchnorm(x: Tensor, gamma: Optional[Tensor], beta: Optional[Tensor],
              running_mean: np.ndarray, running_var: np.ndarray, training: bool,
              momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with statistics over (N, H, W, T).

    Training mode uses batch statistics and updates the running buffers in
    place (unbiased variance, like most frameworks); eval mode uses the
    running buffers.
    """
    _check5(x)
    c = x.shape[1]
    if running_mean.shape != (c,) or (gamma is not None and gamma.shape != (c,)):
        raise ShapeError(f"batchnorm: {c} channels but parameters sized {running_mean.shape}")
    n = x.shape[0]
    bshape = (1, c, 1, 1, 1)
    xd = x.data
    m = xd.size // c

    def chsum(a):
        return a.reshape(n, c, -1).sum(axis=2).sum(axis=0)

    if training:
        mu = chsum(xd) / m
        xc = xd - mu.reshape(bshape)
        var = chsum(xc * xc) / m
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        xc = xd - running_mean.astype(xd.dtype).reshape(bshape)
        var = running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype).reshape(bshape)
    xhat = xc * inv
    gd = gamma.data.reshape(bshape) if gamma is not None else None
    out = xhat if gd is None else xhat * gd
    if beta is not None:
        out += beta.data.reshape(bshape)

    def bw(g):
        sum_g = chsum(g)
        sum_gx = chsum(g * xhat)
        gx = None
        if x.requires_grad:
            scale_ = inv if gd is None else inv * gd
            if training:
                gx = scale_ * (g - (sum_g / m).reshape(bshape) - xhat * (sum_gx / m).reshape(bshape))
            else:
                gx = g * scale_
        res = [gx]
        if gamma is not None:
            res.append(sum_gx)
        if beta is not None:
            res.append(sum_g)
        return tuple(res)

    parents = (x,) + tuple(p for p in (gamma, beta) if p is not None)
    return make_result(out, parents, bw)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape}, expected ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = int(np.flatnonzero((labels < 0) | (labels >= k))[0])
        raise ValueError(f"label {labels[bad]} at index {bad} outside [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = (lse - z[rows, labels]).mean()
    p = np.exp(z - lse[:, None])

    def bw(g):
        d = p.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


__all__ = [
    "AXIS", "Parameter", "Tensor", "add", "add_n", "batchnorm", "concat", "conv2d",
    "cross_entropy", "linear", "mean_axes", "mix", "mul", "pointwise", "pool2d",
    "reduce_pool", "relu", "repeat_time", "reshape", "scale", "sigmoid", "softmax_over",
    "sum_all", "zeros",
]
