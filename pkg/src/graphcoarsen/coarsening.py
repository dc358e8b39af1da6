"""Coarsening algorithms producing a partition at a requested reduction ratio.

All algorithms except the landmark baseline contract vertex sets level by
level.  A level scores candidate sets on the current (already coarsened)
graph, accepts disjoint ones greedily and stops the moment the vertex count
reaches the target, so the final size is exact.  Ties in every greedy order
are broken by the smaller vertex id.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .graph import CoarseningResult, GraphError, Partition, WeightedGraph, induce_coarse_graph
from .operators import laplacian
from .spectral import eigen_smallest_k

log = logging.getLogger(__name__)

ALGORITHMS = ("bl", "heavy_edge", "alg_dist", "affinity", "lv_edge", "lv_neigh")
_ALIASES = {
    "baseline": "bl",
    "heavyedge": "heavy_edge",
    "algebraic_distance": "alg_dist",
    "algebraicdistance": "alg_dist",
    "localvaredge": "lv_edge",
    "local_variation_edges": "lv_edge",
    "localvarneigh": "lv_neigh",
    "local_variation_neighborhoods": "lv_neigh",
}


class CoarseningError(GraphError):
    pass


def canonical_algorithm(name: str) -> str:
    key = str(name).lower()
    key = _ALIASES.get(key, key)
    if key not in ALGORITHMS:
        raise ValueError(f"unknown coarsening algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")
    return key


@dataclass
class CoarseningConfig:
    """Parameters of one coarsening run.

    ``relaxation_sweeps`` are the Jacobi sweeps of the algebraic distance;
    the affinity uses ``affinity_sweeps`` Gauss-Seidel sweeps.  ``lv_k`` is the
    eigenvector count of the local-variation cost (default ``min(40, target)``).
    """

    algorithm: str = "heavy_edge"
    ratio: float = 0.5
    q_vectors: int = 10
    relaxation_sweeps: int = 20
    jacobi_omega: float = 0.5
    affinity_sweeps: int = 1
    lv_k: int | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.algorithm = canonical_algorithm(self.algorithm)
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"ratio must be in [0, 1), got {self.ratio}")
        if self.q_vectors < 1:
            raise ValueError("q_vectors must be >= 1")
        if self.relaxation_sweeps < 1 or self.affinity_sweeps < 1:
            raise ValueError("relaxation sweeps must be >= 1")

    def target(self, n: int) -> int:
        return target_size(n, self.ratio)


def target_size(n: int, ratio: float) -> int:
    t = int(round((1.0 - ratio) * n))
    if t < 2:
        raise CoarseningError(f"ratio {ratio} leaves {t} super-nodes of {n}; at least 2 are required")
    return min(t, n)


# ---------------------------------------------------------------- matching


def _greedy_matching(g: WeightedGraph, order: np.ndarray, budget: int) -> tuple[Partition, int]:
    """Match edges in ``order`` greedily, at most ``budget`` pairs."""
    matched = np.zeros(g.n, dtype=bool)
    mate = np.arange(g.n)
    count = 0
    for e in order:
        if count >= budget:
            break
        a, b = int(g.u[e]), int(g.v[e])
        if matched[a] or matched[b]:
            continue
        matched[a] = matched[b] = True
        mate[b] = a
        count += 1
    return Partition.from_labels(mate), count


def _edge_order(g: WeightedGraph, score: np.ndarray, descending: bool) -> np.ndarray:
    # lexsort: last key is primary
    primary = -score if descending else score
    return np.lexsort((g.v, g.u, primary))


def heavy_edge_scores(g: WeightedGraph) -> np.ndarray:
    d = g.degrees()
    return g.w / np.maximum(d[g.u], d[g.v])


def _test_vectors(rng, n: int, q: int) -> np.ndarray:
    return rng.uniform(-0.5, 0.5, size=(n, q))


def jacobi_smooth(g: WeightedGraph, X: np.ndarray, sweeps: int, omega: float) -> np.ndarray:
    """Damped Jacobi on ``L x = 0``: ``x <- (1 - omega) x + omega D^-1 W x``."""
    A = g.adjacency()
    dinv = 1.0 / g.degrees()
    for _ in range(sweeps):
        X = (1.0 - omega) * X + omega * dinv[:, None] * (A @ X)
    return X


def gauss_seidel_smooth(g: WeightedGraph, X: np.ndarray, sweeps: int) -> np.ndarray:
    """Forward Gauss-Seidel on ``L x = 0`` in vertex order."""
    A = g.adjacency()
    d = g.degrees()
    X = X.copy()
    indptr, indices, data = A.indptr, A.indices, A.data
    for _ in range(sweeps):
        for i in range(g.n):
            lo, hi = indptr[i], indptr[i + 1]
            X[i] = data[lo:hi] @ X[indices[lo:hi]] / d[i]
    return X


def algebraic_distance_scores(g: WeightedGraph, X: np.ndarray) -> np.ndarray:
    diff = X[g.u] - X[g.v]
    return np.sqrt(np.sum(diff * diff, axis=1))


def affinity_scores(g: WeightedGraph, X: np.ndarray) -> np.ndarray:
    """``(x_i . x_j)^2 / (|x_i|^2 |x_j|^2)`` over the test-vector rows."""
    num = np.sum(X[g.u] * X[g.v], axis=1) ** 2
    nu = np.sum(X[g.u] ** 2, axis=1)
    nv = np.sum(X[g.v] ** 2, axis=1)
    den = nu * nv
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _lowest_eigvecs(g: WeightedGraph, k: int) -> np.ndarray:
    k = max(1, min(k, g.n))
    return eigen_smallest_k(laplacian(g), k).eigenvectors


def local_variation_edge_costs(g: WeightedGraph, V: np.ndarray) -> np.ndarray:
    """Variation of the eigenvector block across each edge: ``w_ij |V_i - V_j|^2``.

    This is the trace of ``((I - Pi_C) V)^T L_C ((I - Pi_C) V)`` for the pair
    ``C = {i, j}``, divided by ``|C| - 1 = 1``.
    """
    diff = V[g.u] - V[g.v]
    return g.w * np.sum(diff * diff, axis=1)


def local_variation_neighborhood_costs(g: WeightedGraph, V: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Closed neighborhoods and their costs ``tr(V_C^T L_C V_C) / (|C| - 1)``.

    ``L_C`` is the Laplacian of the edges inside ``C``; it annihilates
    constants, so the projection onto the complement of the cluster mean is
    implicit.
    """
    A = g.adjacency()
    edge_cost = local_variation_edge_costs(g, V)
    # map (min, max) endpoint pairs to edge ids for internal-edge lookup
    E = sp.csr_matrix((np.arange(1, g.m + 1), (g.u, g.v)), shape=(g.n, g.n))
    E = E + E.T
    sets, costs = [], np.empty(g.n)
    for i in range(g.n):
        nb = A.indices[A.indptr[i] : A.indptr[i + 1]]
        c = np.sort(np.concatenate(([i], nb)))
        sub = E[c][:, c]
        ids = np.unique(sub.data) - 1
        sets.append(c)
        costs[i] = edge_cost[ids].sum() / max(c.size - 1, 1)
    return sets, costs


# ---------------------------------------------------------------- levels


def _matching_level(g: WeightedGraph, cfg: CoarseningConfig, budget: int, rng, k_lv: int) -> tuple[Partition, int]:
    alg = cfg.algorithm
    if alg == "heavy_edge":
        order = _edge_order(g, heavy_edge_scores(g), descending=True)
    elif alg == "alg_dist":
        X = jacobi_smooth(g, _test_vectors(rng, g.n, cfg.q_vectors), cfg.relaxation_sweeps, cfg.jacobi_omega)
        order = _edge_order(g, algebraic_distance_scores(g, X), descending=False)
    elif alg == "affinity":
        X = gauss_seidel_smooth(g, _test_vectors(rng, g.n, cfg.q_vectors), cfg.affinity_sweeps)
        order = _edge_order(g, affinity_scores(g, X), descending=True)
    elif alg == "lv_edge":
        V = _lowest_eigvecs(g, k_lv)
        order = _edge_order(g, local_variation_edge_costs(g, V), descending=False)
    else:
        raise AssertionError(alg)
    return _greedy_matching(g, order, budget)


def _neighborhood_level(g: WeightedGraph, budget: int, k_lv: int) -> tuple[Partition, int]:
    V = _lowest_eigvecs(g, k_lv)
    sets, costs = local_variation_neighborhood_costs(g, V)
    order = np.lexsort((np.arange(g.n), costs))
    taken = np.zeros(g.n, dtype=bool)
    label = np.arange(g.n)
    reduced = 0
    for i in order:
        if reduced >= budget:
            break
        c = sets[i]
        if c.size < 2 or taken[c].any():
            continue
        room = budget - reduced
        if c.size - 1 > room:
            # truncate to the center plus its cheapest neighbors so the target is hit exactly
            nb = c[c != i]
            diff = V[nb] - V[i]
            w = np.array([g.adjacency()[i, j] for j in nb])
            cost = w * np.sum(diff * diff, axis=1)
            nb = nb[np.lexsort((nb, cost))][:room]
            c = np.sort(np.concatenate(([i], nb)))
        taken[c] = True
        label[c] = c[0]
        reduced += c.size - 1
    return Partition.from_labels(label), reduced


def baseline_landmarks(g: WeightedGraph, target: int, rng) -> Partition:
    """Assign each vertex to a nearest random landmark by hop count; ties at random."""
    landmarks = np.sort(rng.choice(g.n, size=target, replace=False))
    A = g.adjacency()
    best = np.full(g.n, np.inf)
    owner = np.full(g.n, -1, dtype=np.int64)
    chunk = 256
    for start in range(0, target, chunk):
        idx = landmarks[start : start + chunk]
        dist = shortest_path(A, indices=idx, unweighted=True, directed=False)
        # uniform random jitter in [0, 0.5) breaks equal hop counts uniformly
        key = dist + 0.5 * rng.random(dist.shape)
        j = np.argmin(key, axis=0)
        kbest = key[j, np.arange(g.n)]
        better = kbest < best
        best[better] = kbest[better]
        owner[better] = start + j[better]
    if np.any(~np.isfinite(best)):
        raise CoarseningError("graph is disconnected: some vertex reaches no landmark")
    return Partition(owner, target)


def coarsen(g: WeightedGraph, cfg: CoarseningConfig) -> CoarseningResult:
    """Run ``cfg.algorithm`` on ``g`` down to ``round((1 - ratio) n)`` super-nodes."""
    if g.n < 4:
        raise CoarseningError("coarsening needs at least 4 vertices")
    if not g.is_connected():
        raise CoarseningError("coarsening needs a connected graph")
    target = cfg.target(g.n)
    rng = np.random.default_rng(cfg.seed)
    k_lv = cfg.lv_k if cfg.lv_k is not None else min(40, target)
    levels = 0
    if target >= g.n:
        part = Partition.identity(g.n)
    elif cfg.algorithm == "bl":
        part = baseline_landmarks(g, target, rng)
        levels = 1
    else:
        part = Partition.identity(g.n)
        cur = g
        while cur.n > target:
            budget = cur.n - target
            if cfg.algorithm == "lv_neigh":
                step, reduced = _neighborhood_level(cur, budget, k_lv)
            else:
                step, reduced = _matching_level(cur, cfg, budget, rng, k_lv)
            if reduced == 0:
                raise CoarseningError(
                    f"ratio {cfg.ratio} unreachable: stuck at {cur.n} super-nodes (target {target})"
                )
            part = part.compose(step)
            cur = induce_coarse_graph(cur, step)
            levels += 1
            log.debug("%s level %d: %d super-nodes", cfg.algorithm, levels, cur.n)
    coarse = induce_coarse_graph(g, part)
    return CoarseningResult(
        original=g,
        coarse=coarse,
        partition=part,
        algorithm=cfg.algorithm,
        ratio=float(cfg.ratio),
        metadata={
            "levels": levels,
            "target": target,
            "seed": cfg.seed,
            "clusters_connected": bool(part.clusters_connected(g)),
        },
    )


def heavy_edge_matching(g: WeightedGraph, target: int) -> Partition:
    ratio = 1.0 - target / g.n
    return _run_for_target(g, CoarseningConfig("heavy_edge", ratio), target)


def algebraic_distance(g: WeightedGraph, target: int, q: int = 10, sweeps: int = 20, seed: int = 0) -> Partition:
    cfg = CoarseningConfig("alg_dist", 1.0 - target / g.n, q_vectors=q, relaxation_sweeps=sweeps, seed=seed)
    return _run_for_target(g, cfg, target)


def affinity(g: WeightedGraph, target: int, q: int = 10, seed: int = 0) -> Partition:
    return _run_for_target(g, CoarseningConfig("affinity", 1.0 - target / g.n, q_vectors=q, seed=seed), target)


def local_variation(g: WeightedGraph, target: int, mode: str = "edge", k: int | None = None) -> Partition:
    alg = {"edge": "lv_edge", "neighborhood": "lv_neigh"}[mode]
    return _run_for_target(g, CoarseningConfig(alg, 1.0 - target / g.n, lv_k=k), target)


def _run_for_target(g, cfg, target) -> Partition:
    res = coarsen(g, cfg)
    if res.n_coarse != target:
        raise CoarseningError(f"expected {target} super-nodes, got {res.n_coarse}")
    return res.partition
