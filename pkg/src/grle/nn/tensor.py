"""Dense float64 tensors with reverse-mode differentiation.

Each operation records its inputs and a closure that pushes the output
gradient back to them; :meth:`Tensor.backward` walks the graph in reverse
topological order.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

_grad_enabled = True


@contextmanager
def no_grad():
    """Skip graph recording, for inference-only forward passes."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
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
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def sparse_matmul(p: sp.spmatrix, x: Tensor) -> Tensor:
    """``p @ x`` with ``p`` a constant sparse matrix."""
    if p.shape[1] != x.shape[0]:
        raise ValueError(f"sparse matmul shape mismatch: {p.shape} @ {x.shape}")
    pt = p.T.tocsr()
    return _make(np.asarray(p @ x.data), (x,), lambda g: x._accumulate(np.asarray(pt @ g)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: a._accumulate(g * mask))


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _make(s, (a,), lambda g: a._accumulate(g * s * (1.0 - s)))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: a._accumulate(g * inside))


def sum_(a: Tensor) -> Tensor:
    return _make(np.array(a.data.sum()), (a,), lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    return _make(np.array(a.data.mean()), (a,),
                 lambda g: a._accumulate(np.broadcast_to(g / n, a.shape)))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [_lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, gp in zip(parts, np.split(g, cuts, axis=axis)):
            if p.requires_grad:
                p._accumulate(gp)

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows (or elements of a 1-D tensor) by integer index."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        # scatter-add via a sparse one-hot matrix; much faster than np.add.at
        scatter = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))),
                                shape=(a.shape[0], len(index)))
        a._accumulate(np.asarray(scatter @ g).reshape(a.shape))

    return _make(a.data[index], (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))
