"""Shared instance builders for the test suite."""
import numpy as np
import networkx as nx

from graphcoarsen.graph import CoarseningResult, Partition, WeightedGraph, induce_coarse_graph


def toy_graph() -> WeightedGraph:
    """Six-cycle with a chord inside the first half; 7 unit edges, 2 of them crossing halves."""
    edges = [(i, (i + 1) % 6, 1.0) for i in range(6)] + [(0, 2, 1.0)]
    return WeightedGraph(6, edges)


def toy_partition() -> Partition:
    return Partition([0, 0, 0, 1, 1, 1])


def toy_result() -> CoarseningResult:
    g, p = toy_graph(), toy_partition()
    return CoarseningResult(g, induce_coarse_graph(g, p), p, "manual", 0.5)


def path_graph(n: int, w: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, [(i, i + 1, w) for i in range(n - 1)])


def complete_graph(n: int, w: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, [(i, j, w) for i in range(n) for j in range(i + 1, n)])


def cycle_graph(n: int) -> WeightedGraph:
    return WeightedGraph(n, [(i, (i + 1) % n, 1.0) for i in range(n)])


def random_connected_graph(rng, n: int, p: float = 0.2, wlow: float = 0.0, whigh: float = 2.0) -> WeightedGraph:
    """Random spanning tree plus G(n, p) extras, weights uniform in ``(wlow, whigh]``."""
    perm = rng.permutation(n)
    pairs = set()
    for i in range(1, n):
        a, b = int(perm[i]), int(perm[rng.integers(i)])
        pairs.add((min(a, b), max(a, b)))
    iu, ju = np.triu_indices(n, 1)
    extra = rng.random(iu.size) < p
    pairs |= {(int(a), int(b)) for a, b in zip(iu[extra], ju[extra])}
    pairs = sorted(pairs)
    w = whigh - (whigh - wlow) * rng.random(len(pairs))  # in (wlow, whigh]
    return WeightedGraph(n, [(a, b, float(c)) for (a, b), c in zip(pairs, w)])


def random_connected_partition(rng, g: WeightedGraph, n_coarse: int) -> Partition:
    """Grow ``n_coarse`` clusters from random seeds; every cluster induces a connected subgraph."""
    label = np.full(g.n, -1)
    seeds = rng.choice(g.n, size=n_coarse, replace=False)
    label[seeds] = np.arange(n_coarse)
    A = g.adjacency()
    frontier = list(seeds)
    while (label < 0).any():
        rng.shuffle(frontier)
        grown = []
        for v in frontier:
            nb = A.indices[A.indptr[v] : A.indptr[v + 1]]
            free = nb[label[nb] < 0]
            if free.size:
                u = int(rng.choice(free))
                label[u] = label[v]
                grown.append(u)
        frontier = frontier + grown
    return Partition(label, n_coarse)


def random_instance(rng, n_range=(8, 64), ratio_range=(0.2, 0.7)):
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    g = random_connected_graph(rng, n, p=float(rng.uniform(0.05, 0.3)))
    nc = max(2, int(round(n * (1 - rng.uniform(*ratio_range)))))
    p = random_connected_partition(rng, g, nc)
    return g, p


def result_of(g: WeightedGraph, p: Partition, name: str = "manual") -> CoarseningResult:
    return CoarseningResult(g, induce_coarse_graph(g, p), p, name, 1.0 - p.n_coarse / g.n)


def nx_graph(g: WeightedGraph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    G.add_weighted_edges_from(g.edges)
    return G


def model_fd_check(model, ctx, batch, h=1e-5, names=None):
    """Analytic and central-difference gradients of ``ctx.value(model.predict(batch))``.

    Returns ``{name: (analytic, numeric)}`` for every parameter tensor (or ``names``).
    """
    return model_fd_checks(model, [ctx], batch, h, names)[0]


def model_fd_checks(model, ctxs, batch, h=1e-5, names=None):
    """:func:`model_fd_check` for several loss contexts sharing one set of perturbed predictions."""
    w = model.predict(batch)
    _, backward = model.record(batch)
    out = [{} for _ in ctxs]
    analytic = [backward(ctx.gradient(w)) for ctx in ctxs]
    for name in names or model.names():
        P = model.params[name]
        num = np.zeros((len(ctxs),) + P.shape)
        flat = P.reshape(-1)
        nflat = num.reshape(len(ctxs), -1)
        for i in range(flat.size):
            old = flat[i]
            step = h * max(1.0, abs(old))
            flat[i] = old + step
            up = model.predict(batch)
            flat[i] = old - step
            down = model.predict(batch)
            flat[i] = old
            for c, ctx in enumerate(ctxs):
                nflat[c, i] = (ctx.value(up) - ctx.value(down)) / (2 * step)
        for c in range(len(ctxs)):
            out[c][name] = (analytic[c][name], num[c])
    return out


def fd_mismatch(pairs, rtol=1e-4, atol_rel=1e-6):
    """Largest violation of ``|a - n| <= rtol |n| + atol`` with ``atol = atol_rel * max|n|``, over all tensors."""
    scale = max(float(np.abs(n).max()) for _, n in pairs.values())
    atol = atol_rel * max(scale, 1e-300)
    worst = 0.0
    for a, n in pairs.values():
        excess = np.abs(a - n) - (rtol * np.abs(n) + atol)
        worst = max(worst, float(excess.max()))
    return worst


def run_cli_tour(workdir, main, capture) -> dict:
    """Run every CLI subcommand once inside ``workdir``; returns ``{artifact: bytes}``.

    ``capture`` is a zero-argument callable that returns the stdout text
    written since its previous call (pytest's ``capsys.readouterr().out``).
    """
    from pathlib import Path

    from graphcoarsen.io import save_graph

    d = Path(workdir)
    save_graph(toy_graph(), d / "toy.txt")
    capture()
    out = {}

    def run(name, *argv):
        assert main(list(argv)) == 0, name
        text = capture()
        if text:
            out[name + ".stdout"] = text.encode()

    run("generate", "generate", "--model", "ER", "--n", "48", "--seed", "3", "--out", str(d / "g.txt"))
    run("generate2", "generate", "--model", "GEO", "--n", "48", "--seed", "4", "--out", str(d / "h.json"))
    run("coarsen", "coarsen", str(d / "g.txt"), "--alg", "lv_neigh", "--ratio", "0.5", "--seed", "1",
        "--out", str(d / "r.json"), "--summary", str(d / "s.csv"))
    run("evaluate", "evaluate", str(d / "g.txt"), "--alg", "baseline", "--loss", "quad", "rayleigh", "conductance",
        "eigenerror", "--k", "8", "--seed", "2", "--out", str(d / "e.csv"))
    run("eigs", "eigs", str(d / "r.json"), "--k", "8", "--operator", "normalized", "--out", str(d / "eig.csv"))
    run("optimize", "optimize-weights", str(d / "r.json"), "--max-iter", "30", "--trace", str(d / "t.csv"),
        "--out", str(d / "o.json"))
    run("train", "train", "--graphs", str(d / "g.txt"), "--val", str(d / "h.json"), "--epochs", "2", "--k", "8",
        "--seed", "5", "--checkpoint", str(d / "m.json"), "--history", str(d / "hist.csv"))
    run("apply", "apply", str(d / "h.json"), "--checkpoint", str(d / "m.json"), "--k", "8", "--seed", "6",
        "--out", str(d / "a.json"), "--summary", str(d / "a.csv"))
    run("evaluate_after", "evaluate", str(d / "h.json"), "--after", str(d / "m.json"), "--k", "8")
    (d / "sweep.cfg").write_text(
        f"graphs = {d / 'g.txt'}, {d / 'toy.txt'}\nalgorithms = heavy_edge, alg_dist\nratios = 0.3\nseeds = 0\nk = 4\n"
    )
    run("sweep", "sweep", str(d / "sweep.cfg"), "--out", str(d / "sw.csv"))
    for f in sorted(d.iterdir()):
        if f.suffix in (".csv", ".json", ".txt"):
            out[f.name] = f.read_bytes()
    return out
