"""Weighted graphs, vertex partitions and the induced coarse graph."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised on malformed graphs or partitions."""


class WeightedGraph:
    """Undirected graph with strictly positive edge weights.

    Edges are stored once with ``u < v`` and sorted lexicographically, so two
    graphs with the same edge set have bit-identical arrays.  Optional vertex
    weights hold the cluster sizes of a coarse graph.

    Parameters
    ----------
    n : int
        Number of vertices; ids are ``0 .. n-1``.
    edges : iterable of (u, v, w)
        Edge list.  Orientation is normalized; self-loops, duplicates and
        non-positive or non-finite weights are rejected.
    vertex_weights : array_like, optional
        Per-vertex weights, each ``>= 1``.
    """

    __slots__ = ("n", "u", "v", "w", "vertex_weights", "_adj", "_deg")

    def __init__(self, n: int, edges=(), vertex_weights=None):
        n = int(n)
        if n < 0:
            raise GraphError("vertex count must be non-negative")
        if isinstance(edges, tuple) and len(edges) == 3 and all(
            isinstance(a, np.ndarray) for a in edges
        ):
            u, v, w = (np.asarray(a) for a in edges)
        else:
            rows = list(edges)
            if rows:
                arr = np.asarray(rows, dtype=float)
                if arr.ndim != 2 or arr.shape[1] != 3:
                    raise GraphError("edges must be (u, v, w) triples")
                u, v, w = arr[:, 0], arr[:, 1], arr[:, 2]
            else:
                u = v = w = np.zeros(0)
        if np.any(u != np.round(u)) or np.any(v != np.round(v)):
            raise GraphError("vertex ids must be integers")
        u = u.astype(np.int64)
        v = v.astype(np.int64)
        w = w.astype(np.float64)
        if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
            raise GraphError(f"vertex id out of range [0, {n})")
        if np.any(u == v):
            raise GraphError(f"self-loop at vertex {int(u[u == v][0])}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise GraphError("edge weights must be finite and strictly positive")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        if lo.size > 1:
            dup = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
            if np.any(dup):
                i = int(np.argmax(dup))
                raise GraphError(f"duplicate edge ({lo[i]}, {hi[i]})")
        self.n = n
        self.u, self.v, self.w = lo, hi, w
        for a in (self.u, self.v, self.w):
            a.setflags(write=False)
        if vertex_weights is not None:
            vw = np.asarray(vertex_weights, dtype=np.float64).copy()
            if vw.shape != (n,):
                raise GraphError("vertex_weights must have one entry per vertex")
            if not np.all(np.isfinite(vw)) or np.any(vw < 1):
                raise GraphError("vertex weights must be finite and >= 1")
            vw.setflags(write=False)
            self.vertex_weights = vw
        else:
            self.vertex_weights = None
        self._adj = None
        self._deg = None

    @property
    def m(self) -> int:
        return int(self.w.size)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.u, self.v, self.w)]

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency matrix ``W`` (cached)."""
        if self._adj is None:
            rows = np.concatenate([self.u, self.v])
            cols = np.concatenate([self.v, self.u])
            vals = np.concatenate([self.w, self.w])
            self._adj = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return self._adj

    def degrees(self) -> np.ndarray:
        """Weighted degrees ``D[i, i]``."""
        if self._deg is None:
            d = np.zeros(self.n)
            np.add.at(d, self.u, self.w)
            np.add.at(d, self.v, self.w)
            d.setflags(write=False)
            self._deg = d
        return self._deg

    def unweighted_degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.u, self.v]), minlength=self.n)

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        a = self.adjacency()
        lo, hi = a.indptr[i], a.indptr[i + 1]
        return list(zip(a.indices[lo:hi].tolist(), a.data[lo:hi].tolist()))

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1

    def with_weights(self, w) -> "WeightedGraph":
        """Same topology, new edge weights (in stored edge order)."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape != self.w.shape:
            raise GraphError(f"expected {self.m} weights, got {w.shape}")
        return WeightedGraph(self.n, (self.u.copy(), self.v.copy(), w.copy()), self.vertex_weights)

    def subgraph(self, vertices) -> tuple["WeightedGraph", np.ndarray]:
        """Induced subgraph on ``vertices``; returns it with the sorted vertex ids."""
        keep = np.unique(np.asarray(vertices, dtype=np.int64))
        relabel = -np.ones(self.n, dtype=np.int64)
        relabel[keep] = np.arange(keep.size)
        mask = (relabel[self.u] >= 0) & (relabel[self.v] >= 0)
        sub = WeightedGraph(
            keep.size, (relabel[self.u[mask]], relabel[self.v[mask]], self.w[mask].copy())
        )
        return sub, keep

    def largest_component(self) -> "WeightedGraph":
        if self.n == 0:
            return self
        _, labels = connected_components(self.adjacency(), directed=False)
        counts = np.bincount(labels)
        big = int(np.argmax(counts))
        if counts[big] == self.n:
            return self
        return self.subgraph(np.flatnonzero(labels == big))[0]

    def relabel(self, perm) -> "WeightedGraph":
        """Graph with vertex ``i`` renamed to ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        vw = None
        if self.vertex_weights is not None:
            vw = np.empty(self.n)
            vw[perm] = self.vertex_weights
        return WeightedGraph(self.n, (perm[self.u], perm[self.v], self.w.copy()), vw)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        same_vw = (self.vertex_weights is None and other.vertex_weights is None) or (
            self.vertex_weights is not None
            and other.vertex_weights is not None
            and np.array_equal(self.vertex_weights, other.vertex_weights)
        )
        return (
            self.n == other.n
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.w, other.w)
            and same_vw
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"WeightedGraph(n={self.n}, m={self.m})"


class Partition:
    """Surjective vertex map ``assign: V -> {0, .., n_coarse-1}``."""

    __slots__ = ("assign", "n_coarse", "cluster_sizes")

    def __init__(self, assign, n_coarse: Optional[int] = None):
        a = np.asarray(assign)
        if a.ndim != 1:
            raise GraphError("assignment must be one-dimensional")
        if a.size and np.any(a != np.round(a)):
            raise GraphError("assignment must be integer")
        a = a.astype(np.int64)
        if a.size and a.min() < 0:
            raise GraphError("negative super-node id")
        if n_coarse is None:
            n_coarse = int(a.max()) + 1 if a.size else 0
        n_coarse = int(n_coarse)
        sizes = np.bincount(a, minlength=n_coarse) if a.size else np.zeros(n_coarse, np.int64)
        if sizes.size != n_coarse:
            raise GraphError(f"super-node id out of range [0, {n_coarse})")
        if np.any(sizes == 0):
            raise GraphError(f"assignment is not surjective: super-node {int(np.argmin(sizes))} is empty")
        a.setflags(write=False)
        sizes.setflags(write=False)
        self.assign = a
        self.n_coarse = n_coarse
        self.cluster_sizes = sizes

    @property
    def n(self) -> int:
        return int(self.assign.size)

    @classmethod
    def identity(cls, n: int) -> "Partition":
        return cls(np.arange(n), n)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Canonical partition from arbitrary labels, super-nodes ordered by first appearance."""
        labels = np.asarray(labels)
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        return cls(rank[inv.ravel()], order.size)

    def clusters(self) -> list[np.ndarray]:
        order = np.argsort(self.assign, kind="stable")
        bounds = np.cumsum(self.cluster_sizes)[:-1]
        return np.split(order, bounds)

    def compose(self, coarser: "Partition") -> "Partition":
        """Apply ``coarser`` (defined on this partition's super-nodes) after this one."""
        if coarser.n != self.n_coarse:
            raise GraphError("partition sizes do not chain")
        return Partition(coarser.assign[self.assign], coarser.n_coarse)

    def check(self, g: WeightedGraph) -> None:
        if self.n != g.n:
            raise GraphError(f"partition covers {self.n} vertices, graph has {g.n}")

    def clusters_connected(self, g: WeightedGraph) -> bool:
        """True iff every cluster induces a connected subgraph of ``g``."""
        self.check(g)
        inside = self.assign[g.u] == self.assign[g.v]
        adj = sp.csr_matrix(
            (np.ones(int(inside.sum())), (g.u[inside], g.v[inside])), shape=(g.n, g.n)
        )
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == self.n_coarse

    def __eq__(self, other) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self.n_coarse == other.n_coarse and np.array_equal(self.assign, other.assign)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Partition(n={self.n}, n_coarse={self.n_coarse})"


@dataclass
class CoarseningResult:
    original: WeightedGraph
    coarse: WeightedGraph
    partition: Partition
    algorithm: str
    ratio: float
    metadata: dict = field(default_factory=dict)

    @property
    def n_coarse(self) -> int:
        return self.partition.n_coarse


def induce_coarse_graph(g: WeightedGraph, p: Partition) -> WeightedGraph:
    """Collapse each cluster of ``p``; coarse weights are summed crossing weights.

    Vertex weights of the result are the cluster sizes scaled by the vertex
    weights of ``g`` when ``g`` itself is a coarse graph.
    """
    p.check(g)
    r, s = p.assign[g.u], p.assign[g.v]
    cross = r != s
    lo, hi = np.minimum(r[cross], s[cross]), np.maximum(r[cross], s[cross])
    nc = p.n_coarse
    if lo.size:
        key = lo * nc + hi
        uniq, inv = np.unique(key, return_inverse=True)
        w = np.zeros(uniq.size)
        np.add.at(w, inv, g.w[cross])
        cu, cv = uniq // nc, uniq % nc
    else:
        cu = cv = np.zeros(0, np.int64)
        w = np.zeros(0)
    if g.vertex_weights is not None:
        gamma = np.zeros(nc)
        np.add.at(gamma, p.assign, g.vertex_weights)
    else:
        gamma = p.cluster_sizes.astype(np.float64)
    return WeightedGraph(nc, (cu, cv, w), gamma)


def coarse_edge_index(result_or_graph, p: Partition, g: WeightedGraph) -> np.ndarray:
    """For every edge of ``g``, the index of its coarse edge or -1 if intra-cluster."""
    coarse = result_or_graph.coarse if isinstance(result_or_graph, CoarseningResult) else result_or_graph
    r, s = p.assign[g.u], p.assign[g.v]
    lo, hi = np.minimum(r, s), np.maximum(r, s)
    nc = p.n_coarse
    ckey = coarse.u * nc + coarse.v
    key = lo * nc + hi
    idx = np.searchsorted(ckey, key)
    idx = np.clip(idx, 0, max(ckey.size - 1, 0))
    out = np.where((r != s) & (ckey.size > 0), idx, -1)
    if ckey.size:
        bad = (out >= 0) & (ckey[np.maximum(out, 0)] != key)
        if np.any(bad):
            raise GraphError("coarse graph does not match partition")
    return out


def coarsening_matrices(p: Partition) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.dia_matrix]:
    """Sparse ``P`` (n_coarse x n), ``P+`` (n x n_coarse) and ``Gamma``.

    ``P[r, i] = 1/gamma_r`` and ``P+[i, r] = 1`` when vertex ``i`` lies in
    cluster ``r``.  Hot paths use :func:`project_mean` / :func:`lift_constant`
    instead of these matrices.
    """
    n, nc = p.n, p.n_coarse
    gamma = p.cluster_sizes.astype(np.float64)
    cols = np.arange(n)
    P = sp.csr_matrix((1.0 / gamma[p.assign], (p.assign, cols)), shape=(nc, n))
    P_plus = sp.csr_matrix((np.ones(n), (cols, p.assign)), shape=(n, nc))
    Gamma = sp.diags(gamma)
    return P, P_plus, Gamma


def block_averaging_matrix(p: Partition) -> np.ndarray:
    """Dense ``Pi = P+ P``: ``1/gamma_j`` inside each cluster block, built entrywise."""
    n = p.n
    out = np.zeros((n, n))
    for members in p.clusters():
        out[np.ix_(members, members)] = 1.0 / members.size
    return out


def project_mean(p: Partition, x: np.ndarray) -> np.ndarray:
    """``P x``: cluster means of ``x`` (rows), applied in O(n)."""
    x = np.asarray(x, dtype=np.float64)
    sums = np.zeros((p.n_coarse,) + x.shape[1:])
    np.add.at(sums, p.assign, x)
    scale = p.cluster_sizes.astype(np.float64)
    return sums / scale.reshape((-1,) + (1,) * (x.ndim - 1))


def cluster_sums(p: Partition, x: np.ndarray) -> np.ndarray:
    """``(P+)^T x``: cluster sums."""
    x = np.asarray(x, dtype=np.float64)
    sums = np.zeros((p.n_coarse,) + x.shape[1:])
    np.add.at(sums, p.assign, x)
    return sums


def lift_constant(p: Partition, xc: np.ndarray) -> np.ndarray:
    """``P+ xc``: copy each super-node value to its cluster."""
    return np.asarray(xc, dtype=np.float64)[p.assign]
