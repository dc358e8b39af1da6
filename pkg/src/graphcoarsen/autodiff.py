"""A minimal reverse-mode differentiation tape over dense numpy arrays.

Only the handful of operations the weight-assignment networks need are
provided.  Nodes are recorded in execution order, so walking the record
backwards is a valid topological order.
"""
from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"


def _accumulate(v: Var, g: np.ndarray) -> None:
    if not v.requires_grad:
        return
    if v.grad is not None:
        v.grad = v.grad + g
    else:
        # adjoints are never updated in place, so only leaves (handed to the caller) need a private copy
        v.grad = g.copy() if v._backward is None else g


class Tape:
    """Records operations and propagates adjoints back to the leaves."""

    def __init__(self):
        self.nodes: list[Var] = []

    def _record(self, value, parents, backward) -> Var:
        out = Var(value, parents=parents, backward=backward)
        if out.requires_grad:
            self.nodes.append(out)
        return out

    def leaf(self, value, requires_grad: bool = True) -> Var:
        return Var(value, requires_grad=requires_grad)

    def constant(self, value) -> Var:
        return Var(value, requires_grad=False)

    # operations -------------------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        def back(g):
            _accumulate(a, g @ b.value.T)
            _accumulate(b, a.value.T @ g)

        return self._record(a.value @ b.value, (a, b), back)

    def affine(self, x: Var, W: Var, b: Var) -> Var:
        """``x @ W + b`` with a bias row ``b``; one pass instead of matmul then add."""
        def back(g):
            _accumulate(x, g @ W.value.T)
            _accumulate(W, x.value.T @ g)
            _accumulate(b, g.sum(axis=0, keepdims=True))

        y = x.value @ W.value
        y += b.value
        return self._record(y, (x, W, b), back)

    def spmm(self, S, a: Var) -> Var:
        """``S @ a`` for a constant sparse (or dense) matrix ``S``."""
        def back(g):
            _accumulate(a, np.asarray(S.T @ g))

        return self._record(np.asarray(S @ a.value), (a,), back)

    def add(self, a: Var, b: Var) -> Var:
        """Sum with broadcasting of ``b`` across leading axes (bias rows)."""

        def reduce_to(g, shape):
            while g.ndim > len(shape):
                g = g.sum(axis=0)
            for ax, n in enumerate(shape):
                if n == 1 and g.shape[ax] != 1:
                    g = g.sum(axis=ax, keepdims=True)
            return g

        def back(g):
            _accumulate(a, reduce_to(g, a.value.shape))
            _accumulate(b, reduce_to(g, b.value.shape))

        return self._record(a.value + b.value, (a, b), back)

    def relu(self, a: Var) -> Var:
        mask = a.value > 0

        def back(g):
            _accumulate(a, g * mask)

        return self._record(np.maximum(a.value, 0.0), (a,), back)  # keeps NaN visible

    def add_scalar(self, a: Var, c: float) -> Var:
        def back(g):
            _accumulate(a, g)

        return self._record(a.value + c, (a,), back)

    def mul(self, a: Var, b: Var) -> Var:
        def back(g):
            _accumulate(a, g * b.value)
            _accumulate(b, g * a.value)

        return self._record(a.value * b.value, (a, b), back)

    def sum(self, a: Var) -> Var:
        def back(g):
            _accumulate(a, np.broadcast_to(g, a.value.shape))

        return self._record(np.sum(a.value), (a,), back)

    # reverse sweep -----------------------------------------------------

    def backward(self, out: Var, seed=None) -> None:
        """Propagate ``seed`` (default 1 for a scalar) from ``out`` to every leaf.

        ``seed`` is the gradient of some downstream scalar with respect to
        ``out``, which lets an external analytic gradient feed the tape.
        """
        if seed is None:
            if out.value.size != 1:
                raise ValueError("a seed is required for non-scalar outputs")
            seed = np.ones_like(out.value)
        seed = np.asarray(seed, dtype=np.float64).reshape(out.value.shape)
        for v in self.nodes:
            v.grad = None
        out.grad = seed.copy()
        for v in reversed(self.nodes):
            if v.grad is not None and v._backward is not None:
                v._backward(v.grad)


class Evaluator:
    """Forward-only stand-in for :class:`Tape` on plain arrays.

    Offers the same operations, without recording anything.  ``add``,
    ``relu`` and ``add_scalar`` overwrite their first operand, which must
    therefore be an intermediate result nobody reads again.
    """

    def leaf(self, value, requires_grad: bool = True) -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    constant = leaf

    def matmul(self, a, b):
        return a @ b

    def affine(self, x, W, b):
        y = x @ W
        y += b
        return y

    def spmm(self, S, a):
        return np.asarray(S @ a)

    def add(self, a, b):
        a += b
        return a

    def relu(self, a):
        return np.maximum(a, 0.0, out=a)

    def add_scalar(self, a, c: float):
        a += c
        return a
