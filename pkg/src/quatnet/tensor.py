"""Dynamic reverse-mode differentiation over numpy arrays, plus the
four-block quaternion tensor layout.

A ``Tensor`` is both the value and its tape node: every op records its
parents and a closure that pushes the output gradient back to them.
The graph is rebuilt on every forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch

_EMPTY: tuple = ()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None, _parents=_EMPTY, _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self):
        return total(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def from_op(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Create a node whose ``backward(g)`` returns one gradient (or None) per parent."""
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else _EMPTY,
                  _backward=backward if needs else None, op=op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return from_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def neg(a: Tensor) -> Tensor:
    return from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return from_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   "mul")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """Leaky rectifier with a single learnable slope shared by all elements."""
    mask = a.data > 0
    s = slope.data

    def backward(g):
        return np.where(mask, g, g * s), np.reshape(np.sum(np.where(mask, 0.0, g * a.data)), slope.shape)

    return from_op(np.where(mask, a.data, s * a.data), (a, slope), backward, "prelu")


def identity(a: Tensor) -> Tensor:
    return a


# ---------------------------------------------------------------- reductions / shape


def total(a: Tensor) -> Tensor:
    return from_op(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.size
    return from_op(np.sum(a.data) / n, (a,), lambda g: (np.full(a.shape, g / n),), "mean")


def reshape(a: Tensor, shape) -> Tensor:
    return from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inverse = None if axes is None else np.argsort(axes)
    return from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic(index)

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return from_op(a.data[index], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return from_op(data, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return from_op(data, tensors, backward, "stack")


# ---------------------------------------------------------------- linear algebra


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grads = [(g @ weight.data).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return from_op(out, parents, backward, "linear")


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return from_op(out, (a,), backward, "log_softmax")


def softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return from_op(out, (a,), backward, "softmax")


# ---------------------------------------------------------------- tape traversal


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> dict:
    """Fill ``.grad`` for every node reachable from ``loss``.

    Returns a map from each tensor in ``params`` to its gradient; tensors
    the loss does not depend on get zeros.
    """
    if loss.size != 1:
        raise NonScalarLoss(f"loss must be a single value, got shape {loss.shape}")
    order = _topological(loss) if loss.requires_grad else [loss]
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is not None and parent.requires_grad:
                parent.grad += g
    grads = {}
    reached = {id(n) for n in order}
    for p in params:
        if id(p) not in reached or p.grad is None:
            p.grad = np.zeros_like(p.data)
        grads[p] = p.grad
    return grads


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative deviation between tape gradients and central differences.

    ``f`` must rebuild the graph from the current values of ``params`` on
    each call. The error for each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    analytic = {id(p): g.copy() for p, g in backward(f(), params).items()}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        ana = analytic[id(p)].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(f().data)
            flat[i] = keep - eps
            down = float(f().data)
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            worst = max(worst, abs(ana[i] - numeric) / max(1.0, abs(ana[i])))
    return worst


# ---------------------------------------------------------------- quaternion layout


@dataclass(frozen=True)
class QuaternionTensor:
    """Quaternion array stored as four same-shape real component blocks."""

    r: Tensor
    x: Tensor
    y: Tensor
    z: Tensor

    @property
    def shape(self):
        return self.r.shape

    @property
    def real_shape(self):
        return self.shape[:-1] + (4 * self.shape[-1],) if self.shape else (4,)

    def components(self):
        return self.r, self.x, self.y, self.z

    def arrays(self):
        return tuple(t.data for t in self.components())

    def __getitem__(self, index):
        return qt_pack(*(t[index] for t in self.components()))


def qt_pack(r, x, y, z) -> QuaternionTensor:
    blocks = [as_tensor(b) for b in (r, x, y, z)]
    shapes = {b.shape for b in blocks}
    if len(shapes) != 1:
        raise ShapeMismatch(f"component blocks disagree in shape: {[b.shape for b in blocks]}")
    return QuaternionTensor(*blocks)


def qt_unpack(qt: QuaternionTensor):
    return qt.components()


def qt_to_real(qt: QuaternionTensor, axis: int = -1) -> Tensor:
    """Concatenate blocks r|x|y|z along ``axis`` (4N real for N quaternions)."""
    return concat(qt.components(), axis=axis)


def real_to_qt(t: Tensor, axis: int = -1) -> QuaternionTensor:
    t = as_tensor(t)
    extent = t.shape[axis]
    if extent % 4:
        raise ShapeMismatch(f"axis {axis} has extent {extent}, not a multiple of 4")
    n = extent // 4
    index = [slice(None)] * t.ndim
    blocks = []
    for k in range(4):
        index[axis] = slice(k * n, (k + 1) * n)
        blocks.append(getitem(t, tuple(index)))
    return QuaternionTensor(*blocks)
