"""Minimal reverse-mode differentiation over numpy arrays.

Every op here works in two modes. Given plain arrays it returns a plain
array and records nothing, so inference code pays no bookkeeping cost.
Given at least one :class:`Var` that requires a gradient it returns a
``Var`` wired into the graph. Model code is written once against these ops
and serves both the codec and the trainer.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import tensor as T


class Var:
    """A node in the gradient graph."""

    __array_ufunc__ = None  # make numpy defer binary operators to Var

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=T.DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Var, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def value(x) -> np.ndarray:
    """The numeric content of ``x`` whether it is a Var or an array."""
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=T.DTYPE)


def _tracked(x) -> bool:
    return isinstance(x, Var) and x.requires_grad


def _node(out: np.ndarray, inputs: Sequence, vjps: Sequence[Callable]):
    """Return ``out`` as a graph node if any input is tracked."""
    pairs = [(x, f) for x, f in zip(inputs, vjps) if _tracked(x)]
    if not pairs:
        return out
    v = Var(out, requires_grad=True)
    v._parents = tuple(p for p, _ in pairs)
    v._vjps = tuple(f for _, f in pairs)
    return v


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Var, grad=None) -> None:
    """Accumulate ``d root / d leaf`` into ``leaf.grad`` for every tracked leaf."""
    if not _tracked(root):
        raise ValueError("backward() called on a value that does not require grad")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {
        id(root): np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=T.DTYPE)
    }
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            pg = vjp(g)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# arithmetic


def add(a, b):
    av, bv = value(a), value(b)
    return _node(
        av + bv,
        (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)),
    )


def sub(a, b):
    av, bv = value(a), value(b)
    return _node(
        av - bv,
        (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: -_unbroadcast(g, bv.shape)),
    )


def mul(a, b):
    av, bv = value(a), value(b)
    return _node(
        av * bv,
        (a, b),
        (lambda g: _unbroadcast(g * bv, av.shape), lambda g: _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _node(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g / bv, av.shape),
            lambda g: _unbroadcast(-g * out / bv, bv.shape),
        ),
    )


def neg(a):
    return _node(-value(a), (a,), (lambda g: -g,))


def matmul(a, b):
    av, bv = value(a), value(b)
    out = T.matmul(av, bv)
    return _node(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape),
            lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape),
        ),
    )


# elementwise maps


def exp(a):
    out = T.exp(value(a))
    return _node(out, (a,), (lambda g: g * out,))


def log(a):
    av = value(a)
    return _node(np.log(av), (a,), (lambda g: g / av,))


def sqrt(a):
    out = np.sqrt(value(a))
    return _node(out, (a,), (lambda g: g * 0.5 / out,))


def square(a):
    av = value(a)
    return _node(av * av, (a,), (lambda g: 2.0 * g * av,))


def abs(a):  # noqa: A001 - mirrors numpy naming
    av = value(a)
    return _node(np.abs(av), (a,), (lambda g: g * np.sign(av),))


def sigmoid(a):
    out = T.sigmoid(value(a))
    return _node(out, (a,), (lambda g: g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(value(a))
    return _node(out, (a,), (lambda g: g * (1.0 - out * out),))


def softplus(a):
    av = value(a)
    return _node(T.softplus(av), (a,), (lambda g: g * T.sigmoid(av),))


def silu(a):
    av = value(a)
    s = T.sigmoid(av)
    return _node(av * s, (a,), (lambda g: g * s * (1.0 + av * (1.0 - s)),))


def normal_cdf(a):
    """Standard normal CDF, Phi."""
    av = value(a)
    return _node(
        special.ndtr(av),
        (a,),
        (lambda g: g * np.exp(-0.5 * av * av) / np.sqrt(2.0 * np.pi),),
    )


def lower_bound(a, bound: float):
    """``max(a, bound)``; gradient flows only where ``a`` is above the bound."""
    av = value(a)
    keep = av >= bound
    return _node(np.where(keep, av, bound), (a,), (lambda g: g * keep,))


# reductions and layout


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, (a,), (vjp,))


def mean(a, axis=None, keepdims: bool = False):
    av = value(a)
    count = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a, shape):
    av = value(a)
    return _node(av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),))


def transpose(a, axes):
    av = value(a)
    inverse = np.argsort(axes)
    return _node(av.transpose(axes), (a,), (lambda g: g.transpose(inverse),))


def getitem(a, index):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, index, g)
        return out

    return _node(av[index], (a,), (vjp,))


def take(a, indices: np.ndarray, axis: int = 0):
    """Gather along ``axis``; the result replaces that axis by ``indices.shape``."""
    av = value(a)
    indices = np.asarray(indices)

    def vjp(g):
        out = np.zeros_like(av)
        moved_out = np.moveaxis(out, axis, 0)
        moved_g = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved_out, indices, moved_g)
        return out

    return _node(np.take(av, indices, axis=axis), (a,), (vjp,))


def concat(items: Sequence, axis: int = -1):
    vals = [value(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def make(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            return g[tuple(sl)]

        return vjp

    return _node(out, tuple(items), tuple(make(i) for i in range(len(items))))


def split(a, sizes: Sequence[int], axis: int = -1):
    """Split ``a`` into consecutive chunks of the given sizes along ``axis``."""
    out = []
    start = 0
    ndim = value(a).ndim
    ax = axis % ndim
    for s in sizes:
        sl = [slice(None)] * ndim
        sl[ax] = slice(start, start + s)
        out.append(getitem(a, tuple(sl)))
        start += s
    return out


# convolutions


def conv2d_depthwise(f, kernel):
    fv, kv = value(f), value(kernel)
    out = T.conv2d_depthwise(fv, kv)
    k = kv.shape[0]
    p = k // 2
    h, w, _ = fv.shape

    def vjp_f(g):
        return T.conv2d_depthwise(g, kv[::-1, ::-1, :])

    def vjp_k(g):
        padded = np.pad(fv, ((p, p), (p, p), (0, 0)))
        gk = np.empty_like(kv)
        for a in range(k):
            for b in range(k):
                gk[a, b] = (padded[a : a + h, b : b + w, :] * g).sum(axis=(0, 1))
        return gk

    return _node(out, (f, kernel), (vjp_f, vjp_k))


def conv2d(f, weight):
    fv, wv = value(f), value(weight)
    out = T.conv2d(fv, wv)
    k = wv.shape[0]
    p = k // 2
    h, w, cin = fv.shape

    def vjp_f(g):
        return T.conv2d(g, np.ascontiguousarray(wv[::-1, ::-1].transpose(0, 1, 3, 2)))

    def vjp_w(g):
        padded = np.pad(fv, ((p, p), (p, p), (0, 0)))
        g2 = g.reshape(h * w, -1)
        gw = np.empty_like(wv)
        for a in range(k):
            for b in range(k):
                gw[a, b] = padded[a : a + h, b : b + w, :].reshape(h * w, cin).T @ g2
        return gw

    return _node(out, (f, weight), (vjp_f, vjp_w))
