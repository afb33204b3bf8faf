"""Dense tensors with a reverse-mode gradient tape.

Feature maps are 5-D arrays ordered (batch, channel, height, width, time).
Other tensors (classifier weights, logits, architecture logits) keep their
natural rank.
"""
from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Populate ``.grad`` of every reachable leaf; gradients accumulate."""
        if self.data.size != 1 and grad is None:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        backward(self, seed)

    # operator sugar; the functional module holds the primitives
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.add(self, F.scale(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        from . import functional as F
        if np.isscalar(other):
            return F.scale(self, float(other))
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.scale(self, -1.0)

    def sum(self):
        from . import functional as F
        return F.sum_all(self)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


class Parameter(Tensor):
    """A learnable leaf tensor tagged with a name and an optimizer role."""

    __slots__ = ("name", "role")

    def __init__(self, data, name: str = "", role: str = "weight", dtype=None):
        if role not in ("weight", "alpha"):
            raise ValueError(f"role must be 'weight' or 'alpha', got {role!r}")
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.role = role

    def __repr__(self):
        return f"Parameter({self.name!r}, role={self.role}, shape={self.shape})"


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap an op output, recording ``backward_fn`` if any parent needs grad.

    ``backward_fn(g)`` returns one gradient (or None) per parent. Parents that
    do not need gradients when the op runs are recorded as None, so freezing
    is decided at graph-construction time.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward_fn
    return out


def _toposort(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p is not None and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def backward(root: Tensor, seed: np.ndarray):
    if not root.requires_grad:
        return
    grads = {id(root): seed}
    for node in _toposort(root):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or parent is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
