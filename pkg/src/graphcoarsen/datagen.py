"""Synthetic graph families and random-walk subgraph sampling."""
from __future__ import annotations

import math

import networkx as nx
import numpy as np

from .graph import WeightedGraph

MODELS = ("ER", "BA", "WS", "GEO")
SPLIT_SIZES = tuple(range(512, 2913, 100))


def er_probability(n: int) -> float:
    return min(1.0, 0.1 * 512 / n)


def geo_radius(n: int) -> float:
    return 5.12 / math.sqrt(n)


def _from_networkx(G) -> WeightedGraph:
    G = nx.convert_node_labels_to_integers(G)
    return WeightedGraph(G.number_of_nodes(), [(a, b, 1.0) for a, b in G.edges() if a != b])


def generate(model: str, n: int, seed: int, *, ws_k: int = 10, ws_p: float = 0.1, ba_m: int = 4, geo_dim: int = 2) -> WeightedGraph:
    """A unit-weight graph from ``model``, restricted to its largest component.

    ER uses ``p = 0.1 * 512 / n``, BA attaches each vertex with ``ba_m`` edges,
    WS joins each vertex to its ``ws_k`` nearest ring neighbors and rewires
    with probability ``ws_p``, GEO connects uniform points of the unit
    ``geo_dim``-cube closer than ``5.12 / sqrt(n)``.
    """
    model = model.upper()
    if n < 16:
        raise ValueError("generators need n >= 16")
    if model == "ER":
        G = nx.fast_gnp_random_graph(n, er_probability(n), seed=seed)
    elif model == "BA":
        G = nx.barabasi_albert_graph(n, ba_m, seed=seed)
    elif model == "WS":
        G = nx.watts_strogatz_graph(n, ws_k, ws_p, seed=seed)
    elif model == "GEO":
        G = nx.random_geometric_graph(n, geo_radius(n), dim=geo_dim, seed=seed)
    else:
        raise ValueError(f"unknown graph model {model!r}; choose from {', '.join(MODELS)}")
    return _from_networkx(G).largest_component()


def experiment_split(model: str, seed: int, **kw) -> tuple[list[WeightedGraph], list[WeightedGraph], list[WeightedGraph]]:
    """25 graphs of sizes 512, 612, ..., 2912: the first 5 train, 5 random others validate, 15 test."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=len(SPLIT_SIZES))
    graphs = [generate(model, n, int(s), **kw) for n, s in zip(SPLIT_SIZES, seeds)]
    rest = np.arange(5, len(graphs))
    val_idx = np.sort(rng.choice(rest, size=5, replace=False))
    test_idx = np.setdiff1d(rest, val_idx)
    return graphs[:5], [graphs[i] for i in val_idx], [graphs[i] for i in test_idx]


def random_walk(g: WeightedGraph, start: int, walk_len: int, rng, weighted: bool = True) -> np.ndarray:
    """Visited vertices (with repeats) of a walk of ``walk_len`` steps from ``start``."""
    A = g.adjacency()
    path = np.empty(walk_len + 1, dtype=np.int64)
    path[0] = cur = start
    for t in range(1, walk_len + 1):
        lo, hi = A.indptr[cur], A.indptr[cur + 1]
        if lo == hi:
            path[t:] = cur
            break
        nb = A.indices[lo:hi]
        if weighted:
            c = np.cumsum(A.data[lo:hi])
            cur = int(nb[np.searchsorted(c, rng.random() * c[-1], side="right")])
        else:
            cur = int(nb[rng.integers(nb.size)])
        path[t] = cur
    return path


def random_walk_bootstrap(g: WeightedGraph, num_subgraphs: int, walk_len: int, seed: int, weighted: bool = True) -> list[WeightedGraph]:
    """Subgraphs induced on the vertices of random walks from uniform start vertices.

    Transition probabilities follow edge weights unless ``weighted=False``.
    """
    if walk_len < 0:
        raise ValueError("walk length must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(num_subgraphs):
        start = int(rng.integers(g.n))
        visited = np.unique(random_walk(g, start, walk_len, rng, weighted))
        sub, _ = g.subgraph(visited)
        out.append(sub)
    return out
