"""Majorization-minimization fit of coarse edge weights to a target spectrum.

Solves ``min_{w >= 0, U^T U = I} |Lap(w) - U diag(lam) U^T|_F^2`` over the
half-vectorized weights ``w`` of a graph on ``n`` vertices, alternating a
projected gradient step in ``w`` (step ``1 / (2n)``, the Lipschitz constant of
``Lap^* Lap``) with an exact eigenvector update of ``U``.

When only the coordinates of an existing topology may be nonzero, the
gradient is masked to those coordinates before the step.  After the U-step
the objective equals ``sum_i (mu_i(Lap w) - lam_i)^2`` with ``mu`` the sorted
eigenvalues of ``Lap(w)``, and it never increases from one round to the next.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .graph import WeightedGraph
from .operators import laplacian
from .spectral import eigen_smallest_k

log = logging.getLogger(__name__)

MAX_NODES = 4096


class HalfVecLaplacianOp:
    """``Lap: R^{n(n-1)/2} -> S^n`` with coordinate ``Phi(i, j)`` for each pair ``i < j``.

    Coordinates run column by column through the strict lower triangle
    (equivalently row by row through the upper one), so with 1-based indices
    ``Phi(i, j) = i - j + (j - 1)(2n - j)/2`` for ``i > j``.
    """

    def __init__(self, n: int, edge_mask=None):
        if n < 2:
            raise ValueError("need at least 2 vertices")
        self.n = n
        self.rows, self.cols = np.triu_indices(n, 1)
        self.size = self.rows.size
        if edge_mask is None:
            edge_mask = np.ones(self.size, dtype=bool)
        edge_mask = np.asarray(edge_mask, dtype=bool)
        if edge_mask.shape != (self.size,):
            raise ValueError(f"edge mask must have length {self.size}")
        self.edge_mask = edge_mask

    @classmethod
    def for_graph(cls, g: WeightedGraph, complete: bool = False) -> "HalfVecLaplacianOp":
        op = cls(g.n)
        if not complete:
            mask = np.zeros(op.size, dtype=bool)
            mask[op.index(g.u, g.v)] = True
            op.edge_mask = mask
        return op

    def index(self, i, j):
        """0-based ``Phi`` for pairs ``i != j`` (order-free)."""
        i, j = np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64)
        a, b = np.minimum(i, j), np.maximum(i, j)
        # offset of row a in the row-major upper triangle
        return a * (2 * self.n - a - 1) // 2 + (b - a - 1)

    def vectorize(self, g: WeightedGraph) -> np.ndarray:
        if g.n != self.n:
            raise ValueError("graph size does not match the operator")
        w = np.zeros(self.size)
        w[self.index(g.u, g.v)] = g.w
        return w

    def mask(self, w: np.ndarray) -> np.ndarray:
        return np.where(self.edge_mask, w, 0.0)


def lap_apply(op: HalfVecLaplacianOp, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (op.size,):
        raise ValueError(f"expected {op.size} coordinates")
    M = np.zeros((op.n, op.n))
    M[op.rows, op.cols] = -w
    M[op.cols, op.rows] = -w
    M[np.diag_indices(op.n)] = -M.sum(axis=1)
    return M


def lap_adjoint(op: HalfVecLaplacianOp, Y) -> np.ndarray:
    """``[Lap^* Y]_{ij} = Y_ii + Y_jj - Y_ij - Y_ji``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != (op.n, op.n):
        raise ValueError("matrix shape does not match the operator")
    d = np.diag(Y)
    i, j = op.rows, op.cols
    return d[i] + d[j] - Y[i, j] - Y[j, i]


def mask_matrix(op: HalfVecLaplacianOp, Y) -> np.ndarray:
    """Zero the off-diagonal entries of ``Y`` outside the topology; keep the diagonal."""
    Y = np.array(Y, dtype=np.float64)
    off = ~op.edge_mask
    Y[op.rows[off], op.cols[off]] = 0.0
    Y[op.cols[off], op.rows[off]] = 0.0
    return Y


@dataclass
class MMState:
    w: np.ndarray
    U: np.ndarray
    objective: float
    iteration: int


@dataclass
class MMResult:
    graph: WeightedGraph
    w: np.ndarray
    trace: list[float]
    converged: bool
    state: MMState
    dropped_edges: int = 0
    spectrum: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __iter__(self):
        yield self.graph
        yield self.trace


def _check_target(lam, n: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (n,):
        raise ValueError(f"target needs {n} eigenvalues, got {lam.size}")
    if np.any(~np.isfinite(lam)):
        raise ValueError("target eigenvalues must be finite")
    if np.any(lam < 0):
        raise ValueError("target eigenvalues must be nonnegative")
    if np.any(np.diff(lam) < 0):
        raise ValueError("target eigenvalues must be nondecreasing")
    if abs(lam[0]) > 1e-9 * max(1.0, lam[-1]):
        raise ValueError("the first target eigenvalue of a Laplacian must be 0")
    return lam


def mm_optimize(
    g_coarse: WeightedGraph,
    target_lambda,
    tol: float = 1e-9,
    max_iter: int = 5000,
    complete: bool = False,
    callback=None,
) -> MMResult:
    """Fit the weights of ``g_coarse`` so its Laplacian spectrum approaches ``target_lambda``.

    Parameters
    ----------
    g_coarse : WeightedGraph
        Start point and, unless ``complete``, the topology; weights outside
        it stay exactly 0.
    target_lambda : array of n ascending eigenvalues, the first one 0.
    tol : relative objective change below which iteration stops.
    complete : optimize over all vertex pairs.
    callback : optional ``callback(MMState)`` after every round.

    Returns
    -------
    MMResult
        Unpacks as ``(graph, trace)``; ``trace[0]`` is the objective at the
        start.  Edges whose weight reached 0 are dropped from ``graph``.
    """
    n = g_coarse.n
    if n > MAX_NODES:
        raise ValueError(f"the MM optimizer is capped at {MAX_NODES} vertices (O(n^3) per iteration)")
    lam = _check_target(target_lambda, n)
    op = HalfVecLaplacianOp.for_graph(g_coarse, complete=complete)
    w = op.vectorize(g_coarse)
    step = 1.0 / (2.0 * n)

    mu, U = np.linalg.eigh(lap_apply(op, w))
    obj = float(np.sum((mu - lam) ** 2))
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Lw = lap_apply(op, w)
        target_mat = (U * lam) @ U.T
        grad = op.mask(lap_adjoint(op, Lw - target_mat))
        w = np.maximum(w - step * grad, 0.0)
        w = op.mask(w)
        mu, U = np.linalg.eigh(lap_apply(op, w))
        new = float(np.sum((mu - lam) ** 2))
        trace.append(new)
        if not np.all(w[~op.edge_mask] == 0.0):
            raise AssertionError("weights left the topology subspace")
        if callback is not None:
            callback(MMState(w.copy(), U.copy(), new, it))
        change = abs(obj - new)
        obj = new
        if obj <= 1e-30 or change <= tol * max(trace[-2], 1e-300):
            converged = True
            break
    keep = w > 0
    coords = np.flatnonzero(keep)
    graph = WeightedGraph(n, (op.rows[coords], op.cols[coords], w[coords]), g_coarse.vertex_weights)
    dropped = int(np.sum(op.edge_mask & ~keep))
    if dropped:
        log.info("mm_optimize: %d edges reached weight 0 and were dropped", dropped)
    if not converged:
        log.info("mm_optimize: stopped after %d iterations, objective %.3e", max_iter, obj)
    return MMResult(graph, w, trace, converged, MMState(w, U, obj, it), dropped, mu)


def tree_diameter(g: WeightedGraph) -> int:
    D = shortest_path(g.adjacency(), unweighted=True, directed=False)
    return int(D.max())


def tree_feasibility_check(g_coarse: WeightedGraph, target_lambda, rtol: float = 1e-9) -> str:
    """``"provably-infeasible"`` when no weighting of the tree ``g_coarse`` has that spectrum.

    A weighted tree of diameter ``d`` has at least ``d + 1`` distinct
    Laplacian eigenvalues, so a target with at most ``d`` distinct values is
    out of reach.  Otherwise the answer is ``"feasible-unknown"``.
    """
    lam = np.sort(np.asarray(target_lambda, dtype=np.float64))
    if g_coarse.m != g_coarse.n - 1 or not g_coarse.is_connected():
        return "feasible-unknown"
    scale = max(1.0, float(np.abs(lam).max())) if lam.size else 1.0
    distinct = 1 + int(np.sum(np.diff(lam) > rtol * scale)) if lam.size else 0
    return "provably-infeasible" if distinct <= tree_diameter(g_coarse) else "feasible-unknown"


def brute_force_reference(n: int, target_lambda, starts: int = 20, iters: int = 4000, seed: int = 0) -> float:
    """Smallest value of ``sum (mu_i(Lap w) - lam_i)^2`` over ``w >= 0`` found by restarts.

    Plain projected gradient on the eigenvalue objective over the complete
    topology, using ``d mu_i / d w_ij = (u_i(i) - u_i(j))^2``.  Meant as an
    independent check for tiny ``n``.
    """
    lam = _check_target(target_lambda, n)
    op = HalfVecLaplacianOp(n)
    rng = np.random.default_rng(seed)
    best = np.inf
    scale = max(lam[-1], 1.0) / n
    for _ in range(starts):
        w = rng.uniform(0, 2 * scale, op.size)
        lr = 0.05 / max(lam[-1], 1.0)
        for _ in range(iters):
            mu, U = np.linalg.eigh(lap_apply(op, w))
            r = mu - lam
            dU = (U[op.rows] - U[op.cols]) ** 2  # (pairs, n)
            grad = 2.0 * dU @ r
            w = np.maximum(w - lr * grad, 0.0)
        mu = np.linalg.eigvalsh(lap_apply(op, w))
        best = min(best, float(np.sum((mu - lam) ** 2)))
    return best


def original_target(g: WeightedGraph, n_coarse: int) -> np.ndarray:
    """First ``n_coarse`` eigenvalues of the combinatorial Laplacian of ``g``."""
    lam = eigen_smallest_k(laplacian(g), n_coarse).eigenvalues
    lam = np.maximum.accumulate(np.maximum(lam, 0.0))
    lam[0] = 0.0
    return lam


def edge_weights_on(g_coarse: WeightedGraph, result: MMResult) -> np.ndarray:
    """Optimized weight of every edge of ``g_coarse`` (0 where it vanished)."""
    op = HalfVecLaplacianOp(g_coarse.n)
    return result.w[op.index(g_coarse.u, g_coarse.v)]


__all__ = [
    "HalfVecLaplacianOp",
    "MMResult",
    "MMState",
    "brute_force_reference",
    "edge_weights_on",
    "lap_adjoint",
    "lap_apply",
    "mask_matrix",
    "mm_optimize",
    "original_target",
    "tree_feasibility_check",
]
