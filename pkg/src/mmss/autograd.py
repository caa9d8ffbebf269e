"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op returns a fresh :class:`Node`; calling :meth:`Node.backward` on a
scalar root walks the graph in reverse topological order and accumulates
``grad`` on every reachable node.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

__all__ = [
    "Node",
    "ShapeError",
    "as_node",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "exp",
    "gelu",
    "sigmoid",
    "tanh",
    "relu",
    "abs_",
    "elementwise",
    "softmax",
    "sum_",
    "mean",
    "concat",
    "take",
    "slice_cols",
    "slice_rows",
    "reshape",
    "transpose",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class Node:
    """A value in the computation graph.

    ``parents`` holds ``(node, vjp)`` pairs where ``vjp`` maps the upstream
    gradient of this node to the contribution for that parent.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "name")

    def __init__(self, value, parents=(), requires_grad=True, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def detach(self):
        return self.value.copy()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Node(shape={self.value.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` of every reachable node."""
        if self.value.size != 1:
            raise ValueError(
                f"backward() needs a scalar root, got shape {self.value.shape}"
            )
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            for parent, vjp in node.parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _topological_order(root):
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
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_node(x):
    if isinstance(x, Node):
        return x
    return Node(x, requires_grad=False)


def constant(x):
    return Node(x, requires_grad=False)


def _make(value, parents):
    parents = [(p, f) for p, f in parents if p.requires_grad]
    return Node(value, parents, requires_grad=bool(parents))


def _unbroadcast(g, shape):
    # sum out axes that numpy broadcasting added or stretched
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(
            f"matmul inner dims disagree: {av.shape[0]}x{av.shape[1]} "
            f"by {bv.shape[0]}x{bv.shape[1]}"
        )
    return _make(
        av @ bv,
        [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)],
    )


def add(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = a.value.shape, b.value.shape
    try:
        out = a.value + b.value
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {sa} and {sb}") from exc
    return _make(
        out,
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))],
    )


def sub(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = a.value.shape, b.value.shape
    try:
        out = a.value - b.value
    except ValueError as exc:
        raise ShapeError(f"cannot subtract shapes {sa} and {sb}") from exc
    return _make(
        out,
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(-g, sb))],
    )


def mul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    try:
        out = av * bv
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {av.shape} and {bv.shape}") from exc
    return _make(
        out,
        [
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ],
    )


def neg(x):
    x = as_node(x)
    return _make(-x.value, [(x, lambda g: -g)])


def scale(x, c):
    x = as_node(x)
    c = float(c)
    return _make(x.value * c, [(x, lambda g: g * c)])


def exp(x):
    x = as_node(x)
    out = np.exp(x.value)
    return _make(out, [(x, lambda g: g * out)])


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, ``0.5 * x * (1 + erf(x / sqrt(2)))``."""
    x = as_node(x)
    v = x.value
    cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * v * v)
    return _make(v * cdf, [(x, lambda g: g * (cdf + v * pdf))])


def sigmoid(x):
    x = as_node(x)
    v = x.value
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _make(out, [(x, lambda g: g * out * (1.0 - out))])


def tanh(x):
    x = as_node(x)
    out = np.tanh(x.value)
    return _make(out, [(x, lambda g: g * (1.0 - out * out))])


def relu(x):
    """Hinge ``max(0, x)``; subgradient 0 at 0."""
    x = as_node(x)
    mask = (x.value > 0).astype(np.float64)
    return _make(x.value * mask, [(x, lambda g: g * mask)])


def abs_(x):
    """Absolute value; subgradient 0 at 0."""
    x = as_node(x)
    sign = np.sign(x.value)
    return _make(np.abs(x.value), [(x, lambda g: g * sign)])


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "hinge": relu,
    "abs": abs_,
    "gelu": gelu,
    "exp": exp,
}


def elementwise(x, kind):
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(x)


def _check_axis(x, axis):
    nd = x.value.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"axis {axis} out of range for shape {x.value.shape}")
    return axis % nd


def softmax(x, axis=-1):
    x = as_node(x)
    axis = _check_axis(x, axis)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _make(out, [(x, vjp)])


def sum_(x, axis=None):
    x = as_node(x)
    shape = x.value.shape
    if axis is None:
        return _make(x.value.sum(), [(x, lambda g: np.broadcast_to(g, shape).copy())])
    axis = _check_axis(x, axis)
    return _make(
        x.value.sum(axis=axis),
        [(x, lambda g: np.broadcast_to(np.expand_dims(g, axis), shape).copy())],
    )


def mean(x, axis=None):
    x = as_node(x)
    n = x.value.size if axis is None else x.value.shape[_check_axis(x, axis)]
    return scale(sum_(x, axis), 1.0 / n)


def concat(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat of an empty list")
    axis = _check_axis(nodes[0], axis)
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        shapes = [n.value.shape for n in nodes]
        raise ShapeError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([0] + [n.value.shape[axis] for n in nodes])
    parents = []
    for node, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
        index = [slice(None)] * out.ndim
        index[axis] = slice(lo, hi)
        index = tuple(index)
        parents.append((node, lambda g, index=index: g[index].copy()))
    return _make(out, parents)


def take(x, indices):
    """Gather entries of a 1-d node (or rows of a 2-d node)."""
    x = as_node(x)
    idx = np.asarray(indices, dtype=np.intp)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _make(x.value[idx], [(x, vjp)])


def slice_rows(x, start, stop):
    x = as_node(x)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return out

    return _make(x.value[start:stop], [(x, vjp)])


def slice_cols(x, start, stop):
    x = as_node(x)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return out

    return _make(x.value[:, start:stop], [(x, vjp)])


def reshape(x, shape):
    x = as_node(x)
    old = x.value.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return _make(out, [(x, lambda g: g.reshape(old))])


def transpose(x):
    x = as_node(x)
    return _make(x.value.T, [(x, lambda g: g.T)])
