"""Small tape-free reverse-mode autodiff over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes its
gradient back to them. :func:`grad` walks the graph in reverse topological
order. Only the operations the policy losses need are provided.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericalError


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "name", "op")

    def __init__(self, data, parents=(), backward_fn=None, name=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.data.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, 1.0 / _const(other).data)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _leaf_names(t: Tensor) -> list:
    seen, names, stack = set(), [], [t]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if not node.parents and node.name:
            names.append(node.name)
        stack.extend(node.parents)
    return sorted(names)


def _node(data, parents, backward_fn, op) -> Tensor:
    out = Tensor(data, parents, backward_fn, op=op)
    if not np.all(np.isfinite(out.data)):
        tmp = Tensor(0.0, parents)
        raise NumericalError(
            f"non-finite value produced by '{op}'; depends on parameters: "
            f"{', '.join(_leaf_names(tmp)) or '(none)'}"
        )
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), back, "mul")


def neg(a) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def back(g):
        ga = g @ b.data.T if b.data.ndim == 2 else np.outer(g, b.data)
        if a.data.ndim == 1:
            gb = np.outer(a.data, g)
        else:
            gb = a.data.T @ g
        return ga, gb

    return _node(a.data @ b.data, (a, b), back, "matmul")


def tanh(a) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a) -> Tensor:
    # overflow is reported by the callers' finiteness checks
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,), "exp")


def square(a) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(a.data.sum(axis=axis), (a,), back, "sum")


def mean(a, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _const(a), _const(b)
    take_a = a.data <= b.data

    def back(g):
        return _unbroadcast(np.where(take_a, g, 0.0), a.shape), _unbroadcast(np.where(take_a, 0.0, g), b.shape)

    return _node(np.minimum(a.data, b.data), (a, b), back, "minimum")


def clip(a, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),), "clip")


def grad(loss: Tensor, wrt: dict) -> dict:
    """Gradients of scalar ``loss`` w.r.t. each leaf tensor in ``wrt``."""
    if loss.data.size != 1:
        raise ValueError("grad needs a scalar loss")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            grads[id(node)] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not np.all(np.isfinite(pg)):
                raise NumericalError(
                    f"non-finite gradient flowing from '{node.op}' into "
                    f"{parent.name or parent.op}; depends on: {', '.join(_leaf_names(parent))}"
                )
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return {name: grads.get(id(t), np.zeros_like(t.data)) for name, t in wrt.items()}
