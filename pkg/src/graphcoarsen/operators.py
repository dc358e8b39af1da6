"""Laplace operators, projection/lift maps and scalar functionals.

Each functional comes with a coarse operator and a projection/lift pair such
that the functional is invariant under the lift:

* quadratic form of ``L``: coarse ``L^ = D^ - W^``, proj ``P``, lift ``P+``;
* Rayleigh quotient of ``L``: coarse ``G^-1/2 L^ G^-1/2`` (``G`` = cluster
  sizes), proj ``G^-1/2 (P+)^T``, lift ``P+ G^-1/2``;
* quadratic form of the normalized Laplacian: coarse normalized Laplacian,
  proj ``D^^1/2 P D^-1/2``, lift ``D^1/2 P+ D^^-1/2`` (``D^`` coarse degrees).
"""
from __future__ import annotations

import enum
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .graph import GraphError, Partition, WeightedGraph, cluster_sums, lift_constant, project_mean


class OperatorKind(enum.Enum):
    COMBINATORIAL = "combinatorial"
    NORMALIZED = "normalized"
    DOUBLY_WEIGHTED = "doubly_weighted"

    @classmethod
    def parse(cls, value) -> "OperatorKind":
        if isinstance(value, cls):
            return value
        aliases = {"comb": "combinatorial", "norm": "normalized", "dw": "doubly_weighted"}
        v = str(value).lower()
        return cls(aliases.get(v, v))


class LinearMap:
    """A vector-to-vector map with declared dimensions.

    Works on vectors and, column-wise, on ``(dim, k)`` arrays.
    """

    def __init__(self, in_dim: int, out_dim: int, fn: Callable[[np.ndarray], np.ndarray], name: str = ""):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self._fn = fn
        self.name = name

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.in_dim:
            raise ValueError(f"{self.name or 'map'} expects dimension {self.in_dim}, got {x.shape[0]}")
        y = self._fn(x)
        assert y.shape[0] == self.out_dim
        return y

    def then(self, other: "LinearMap") -> "LinearMap":
        """``other`` after ``self``."""
        if other.in_dim != self.out_dim:
            raise ValueError("dimension mismatch in composition")
        return LinearMap(self.in_dim, other.out_dim, lambda x: other(self(x)), f"{other.name}*{self.name}")

    def to_dense(self) -> np.ndarray:
        return self(np.eye(self.in_dim))

    def __repr__(self) -> str:
        return f"LinearMap({self.name}: R^{self.in_dim} -> R^{self.out_dim})"


def _scale_rows(d: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    def f(x):
        return x * d.reshape((-1,) + (1,) * (x.ndim - 1))
    return f


def combinatorial_laplacian(g: WeightedGraph) -> sp.csr_matrix:
    return (sp.diags(g.degrees()) - g.adjacency()).tocsr()


def laplacian(g: WeightedGraph, kind=OperatorKind.COMBINATORIAL) -> sp.csr_matrix:
    """Sparse symmetric Laplacian of ``g``.

    Raises
    ------
    GraphError
        ``NORMALIZED`` on a graph with an isolated vertex, or
        ``DOUBLY_WEIGHTED`` on a graph without vertex weights.
    """
    kind = OperatorKind.parse(kind)
    L = combinatorial_laplacian(g)
    if kind is OperatorKind.COMBINATORIAL:
        return L
    if kind is OperatorKind.NORMALIZED:
        d = g.degrees()
        if np.any(d <= 0):
            raise GraphError(f"normalized Laplacian undefined: vertex {int(np.argmin(d))} is isolated")
        s = sp.diags(1.0 / np.sqrt(d))
        return (sp.identity(g.n, format="csr") - s @ g.adjacency() @ s).tocsr()
    if g.vertex_weights is None:
        raise GraphError("doubly-weighted Laplacian needs vertex weights")
    s = sp.diags(1.0 / np.sqrt(g.vertex_weights))
    return (s @ L @ s).tocsr()


def degree_sqrt(g: WeightedGraph, what: str) -> np.ndarray:
    d = g.degrees()
    if np.any(d <= 0):
        raise GraphError(f"{what} has a zero-degree vertex; normalized maps undefined")
    return np.sqrt(d)


def projection_lift(p: Partition, g: WeightedGraph, g_coarse: WeightedGraph, kind=OperatorKind.COMBINATORIAL):
    """Projection ``R^n -> R^n_coarse`` and lift ``R^n_coarse -> R^n`` for ``kind``.

    In every case ``proj(lift(x)) == x``.
    """
    kind = OperatorKind.parse(kind)
    p.check(g)
    if g_coarse.n != p.n_coarse:
        raise ValueError(f"coarse graph has {g_coarse.n} vertices, partition {p.n_coarse}")
    n, nc = p.n, p.n_coarse
    if kind is OperatorKind.COMBINATORIAL:
        proj = LinearMap(n, nc, lambda x: project_mean(p, x), "P")
        lift = LinearMap(nc, n, lambda x: lift_constant(p, x), "P+")
    elif kind is OperatorKind.DOUBLY_WEIGHTED:
        inv_sqrt_gamma = 1.0 / np.sqrt(p.cluster_sizes.astype(np.float64))
        scale = _scale_rows(inv_sqrt_gamma)
        proj = LinearMap(n, nc, lambda x: scale(cluster_sums(p, x)), "G^-1/2 P+^T")
        lift = LinearMap(nc, n, lambda x: lift_constant(p, scale(x)), "P+ G^-1/2")
    else:
        sd = degree_sqrt(g, "original graph")
        sdc = degree_sqrt(g_coarse, "coarse graph")
        proj = LinearMap(
            n, nc, lambda x: _scale_rows(sdc)(project_mean(p, _scale_rows(1.0 / sd)(x))), "D^1/2 P D^-1/2"
        )
        lift = LinearMap(
            nc, n, lambda x: _scale_rows(sd)(lift_constant(p, _scale_rows(1.0 / sdc)(x))), "D^1/2 P+ D^-1/2"
        )
    return proj, lift


def quadratic_form(op, x) -> float:
    """``x^T A x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or op.shape != (x.size, x.size):
        raise ValueError(f"operator of shape {op.shape} and vector of shape {x.shape} do not agree")
    return float(x @ (op @ x))


def rayleigh_quotient(op, x) -> float:
    """``x^T A x / x^T x``; raises on the zero vector."""
    x = np.asarray(x, dtype=np.float64)
    nrm = float(x @ x)
    if nrm == 0.0:
        raise ValueError("Rayleigh quotient of the zero vector")
    return quadratic_form(op, x) / nrm


def _subset_mask(n: int, s) -> np.ndarray:
    s = np.asarray(s)
    if s.dtype == bool:
        if s.shape != (n,):
            raise ValueError("boolean subset mask has the wrong length")
        return s
    mask = np.zeros(n, dtype=bool)
    mask[s.astype(np.int64)] = True
    return mask


def conductance(g: WeightedGraph, s) -> float:
    """Cut weight of ``S`` over ``min(a(S), a(V \\ S))`` with weighted volumes."""
    mask = _subset_mask(g.n, s)
    k = int(mask.sum())
    if k == 0 or k == g.n:
        raise ValueError("conductance needs a proper non-empty subset")
    crossing = mask[g.u] != mask[g.v]
    cut = float(g.w[crossing].sum())
    d = g.degrees()
    vol_s = float(d[mask].sum())
    vol_c = float(d[~mask].sum())
    denom = min(vol_s, vol_c)
    if denom == 0.0:
        raise ValueError("conductance undefined: one side has zero volume")
    return cut / denom
