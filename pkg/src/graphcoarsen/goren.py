"""Learned coarse edge weights.

Each coarse edge ``(r, s)`` is described by the subgraph of the original graph
on the two clusters.  A small graph isomorphism network maps that subgraph
to a weight ``1 + relu(head(mean_pool(h)))``; the network is trained so the
coarse graph with predicted weights minimizes one of the losses in
``graphcoarsen.losses``.  The loss gradient in the coarse weights is
computed analytically and fed into the network's reverse sweep.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import Evaluator, Tape, Var
from .coarsening import CoarseningConfig, coarsen
from .graph import CoarseningResult, WeightedGraph, coarse_edge_index
from .losses import LossContext, LossKind, LossSpec, improvement_pct, make_test_vectors

log = logging.getLogger(__name__)

N_FEATURES = 5


def ldp_features(g: WeightedGraph) -> np.ndarray:
    """Local degree profile ``(deg, min, max, mean, std of neighbor degrees)``, unweighted."""
    deg = g.unweighted_degrees().astype(np.float64)
    out = np.zeros((g.n, N_FEATURES))
    out[:, 0] = deg
    if g.m == 0:
        return out
    A = g.adjacency()
    indptr, indices = A.indptr, A.indices
    nb_deg = deg[indices]
    has = deg > 0
    starts = indptr[:-1][has]
    out[has, 1] = np.minimum.reduceat(nb_deg, starts)
    out[has, 2] = np.maximum.reduceat(nb_deg, starts)
    s1 = np.add.reduceat(nb_deg, starts)
    s2 = np.add.reduceat(nb_deg * nb_deg, starts)
    mean = s1 / deg[has]
    out[has, 3] = mean
    out[has, 4] = np.sqrt(np.maximum(s2 / deg[has] - mean * mean, 0.0))
    return out


@dataclass
class EdgeSubgraph:
    coarse_edge: tuple[int, int]
    vertices: np.ndarray
    graph: WeightedGraph
    node_features: np.ndarray
    edge_features: np.ndarray


def extract_edge_subgraphs(g: WeightedGraph, result: CoarseningResult, crossing_feature: str = "weight") -> list[EdgeSubgraph]:
    """One subgraph per coarse edge, on the union of its two clusters.

    Edge features are the original weights.  With ``crossing_feature="one"``
    the crossing edges get feature 1 instead.
    """
    if crossing_feature not in ("weight", "one"):
        raise ValueError("crossing_feature must be 'weight' or 'one'")
    p = result.partition
    cg = result.coarse
    cidx = coarse_edge_index(cg, p, g)
    ru = p.assign[g.u]
    intra = np.flatnonzero(cidx < 0)
    intra_by_cluster = [[] for _ in range(p.n_coarse)]
    for e in intra:
        intra_by_cluster[ru[e]].append(e)
    cross = np.flatnonzero(cidx >= 0)
    cross_by_edge = [[] for _ in range(cg.m)]
    for e in cross:
        cross_by_edge[cidx[e]].append(e)
    clusters = p.clusters()
    subs = []
    for k in range(cg.m):
        r, s = int(cg.u[k]), int(cg.v[k])
        verts = np.sort(np.concatenate((clusters[r], clusters[s])))
        edges = np.array(sorted(intra_by_cluster[r] + intra_by_cluster[s] + cross_by_edge[k]), dtype=np.int64)
        local = np.searchsorted(verts, np.stack((g.u[edges], g.v[edges])))
        # WeightedGraph stores edges sorted by (min, max) endpoint; follow that order
        a, b = np.minimum(local[0], local[1]), np.maximum(local[0], local[1])
        order = np.lexsort((b, a))
        edges = edges[order]
        sub = WeightedGraph(verts.size, (a[order], b[order], g.w[edges]))
        feat = g.w[edges].copy()
        if crossing_feature == "one":
            feat[cidx[edges] >= 0] = 1.0
        subs.append(EdgeSubgraph((r, s), verts, sub, ldp_features(sub), feat[:, None]))
    return subs


class SubgraphBatch:
    """Disjoint union of subgraphs in the sparse form the networks consume.

    ``S`` aggregates over closed neighborhoods (adjacency plus identity);
    ``edge_sum`` and ``edge_count`` hold, per node, the sum of incident edge
    features and the number of incident edges, each counting a self-loop of
    feature 1.  ``pool`` averages nodes of each subgraph.
    """

    def __init__(self, subs: Sequence[EdgeSubgraph]):
        sizes = np.array([s.graph.n for s in subs], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        N = int(offsets[-1])
        self.size = len(subs)
        self.n_nodes = N
        self.n_edges = int(sum(s.graph.m for s in subs))
        X = np.zeros((N, N_FEATURES))
        edge_sum = np.ones((N, 1))
        edge_count = np.ones((N, 1))
        rows, cols = [], []
        for i, s in enumerate(subs):
            o = offsets[i]
            X[o : o + s.graph.n] = s.node_features
            u, v = s.graph.u + o, s.graph.v + o
            rows += [u, v]
            cols += [v, u]
            f = s.edge_features[:, 0]
            np.add.at(edge_sum[:, 0], u, f)
            np.add.at(edge_sum[:, 0], v, f)
            np.add.at(edge_count[:, 0], u, 1.0)
            np.add.at(edge_count[:, 0], v, 1.0)
        r = np.concatenate(rows + [np.arange(N)]) if rows else np.arange(N)
        c = np.concatenate(cols + [np.arange(N)]) if cols else np.arange(N)
        self.S = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(N, N))
        self.X = X
        self.edge_sum = edge_sum
        self.edge_count = edge_count
        owner = np.repeat(np.arange(self.size), sizes)
        self.pool = sp.csr_matrix((1.0 / sizes[owner], (owner, np.arange(N))), shape=(self.size, N))

    def subset(self, subs: Sequence[EdgeSubgraph]) -> "SubgraphBatch":
        return SubgraphBatch(subs)


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class WeightModel:
    """Shared parameter bookkeeping, prediction and checkpoint I/O."""

    kind = "base"

    def __init__(self, params: dict[str, np.ndarray], arch: dict, seed: int, buffers: dict | None = None):
        self.params = params
        self.arch = arch
        self.seed = seed
        # frozen input standardization, identity until fit_normalization
        self.buffers = buffers or {"feat.mean": np.zeros((1, N_FEATURES)), "feat.scale": np.ones((1, N_FEATURES))}

    @property
    def normalization_fitted(self) -> bool:
        return bool(np.any(self.buffers["feat.mean"] != 0) or np.any(self.buffers["feat.scale"] != 1))

    def fit_normalization(self, batches: Sequence[SubgraphBatch]) -> None:
        """Standardize node features with the mean and std over ``batches``."""
        X = np.concatenate([b.X for b in batches])
        std = X.std(axis=0, keepdims=True)
        self.buffers = {"feat.mean": X.mean(axis=0, keepdims=True), "feat.scale": np.where(std > 0, std, 1.0)}

    def init_head_bias(self, batches: Sequence[SubgraphBatch], targets: Sequence[np.ndarray]) -> None:
        """Set the head bias so predictions on ``batches`` start at the mean of ``targets``.

        With a zero bias the head pre-activation is often negative on every
        subgraph, which pins all predictions to the floor 1 with no gradient.
        """
        self.params["head.b"][:] = 0.0
        z = np.concatenate([self.predict_raw(b) for b in batches])
        t = np.concatenate([np.asarray(x, dtype=np.float64) for x in targets])
        self.params["head.b"][:] = max(float(t.mean()) - 1.0, 0.0) - float(z.mean())

    def predict_raw(self, batch: SubgraphBatch) -> np.ndarray:
        """Head pre-activation, before the ``1 + relu`` floor."""
        self._raw_head = True
        try:
            return self.forward(batch, Evaluator(), self.params)[:, 0].copy()
        finally:
            self._raw_head = False

    def features(self, batch: SubgraphBatch) -> np.ndarray:
        if batch.X.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} node features, got {batch.X.shape[1]}")
        return (batch.X - self.buffers["feat.mean"]) / self.buffers["feat.scale"]

    def names(self) -> list[str]:
        return sorted(self.params)

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, batch: SubgraphBatch, tape: Tape, leaves: dict[str, Var]) -> Var:
        """Head output for every subgraph of ``batch``, shape ``(count, 1)``.

        ``tape`` is a :class:`Tape` (``leaves`` are its variables) or an
        :class:`Evaluator` (``leaves`` are the parameter arrays).
        """
        raise NotImplementedError

    def predict(self, batch: SubgraphBatch) -> np.ndarray:
        return self.forward(batch, Evaluator(), self.params)[:, 0].copy()

    def record(self, batch: SubgraphBatch):
        """Taped forward pass: ``(weights, backward)``.

        ``backward(seed)`` returns the vector-Jacobian product
        ``seed^T d weights / d params`` as a dict of parameter gradients.
        """
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in self.params.items()}
        out = self.forward(batch, tape, leaves)

        def backward(seed) -> dict[str, np.ndarray]:
            for v in leaves.values():
                v.grad = None  # leaves are not on the tape; clear them so backward can be called again
            tape.backward(out, np.asarray(seed, dtype=np.float64)[:, None])
            return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}

        return out.value[:, 0].copy(), backward

    def value_and_grad(self, batch: SubgraphBatch, seed) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Predicted weights and the vector-Jacobian product for ``seed``."""
        w, backward = self.record(batch)
        return w, backward(seed)

    _raw_head = False

    def _head(self, tape: Tape, leaves, h: Var) -> Var:
        z = tape.affine(h, leaves["head.W"], leaves["head.b"])
        if self._raw_head:
            return z
        return tape.add_scalar(tape.relu(z), 1.0)

    def copy(self) -> "WeightModel":
        return type(self)._from(
            self.arch, {k: v.copy() for k, v in self.params.items()}, self.seed, {k: v.copy() for k, v in self.buffers.items()}
        )

    def zero_head(self) -> None:
        self.params["head.W"][:] = 0.0
        self.params["head.b"][:] = 0.0

    def to_dict(self) -> dict:
        return {
            "model": self.kind,
            "architecture": self.arch,
            "seed": self.seed,
            "params": {k: _tensor(v) for k, v in sorted(self.params.items())},
            "buffers": {k: _tensor(v) for k, v in sorted(self.buffers.items())},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def _from(cls, arch, params, seed, buffers=None):
        obj = cls.__new__(cls)
        WeightModel.__init__(obj, params, arch, seed, buffers)
        return obj


def _tensor(v: np.ndarray) -> dict:
    return {"shape": list(v.shape), "data": v.ravel().tolist()}


def _untensor(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


class GinModel(WeightModel):
    """Three GIN blocks of width 50 over LDP node features and weight edge features.

    ``h_v <- relu(MLP(sum_{u in N(v) + v} h_u + sum_{e at v} h_e))`` with a
    two-layer MLP per block, a constant edge encoding and mean pooling.
    """

    kind = "gin"

    def __init__(self, layers: int = 3, dim: int = 50, seed: int = 0):
        rng = np.random.default_rng(seed)
        params = {
            "node.W": _glorot(rng, N_FEATURES, dim),
            "node.b": np.zeros((1, dim)),
            "edge.W": _glorot(rng, 1, dim),
            "edge.b": np.zeros((1, dim)),
        }
        for k in range(layers):
            params[f"gin{k}.W1"] = _glorot(rng, dim, dim)
            params[f"gin{k}.b1"] = np.zeros((1, dim))
            params[f"gin{k}.W2"] = _glorot(rng, dim, dim)
            params[f"gin{k}.b2"] = np.zeros((1, dim))
        params["head.W"] = _glorot(rng, dim, 1)
        params["head.b"] = np.zeros((1, 1))
        super().__init__(params, {"layers": layers, "dim": dim}, seed)

    def forward(self, batch, tape, leaves):
        X = tape.constant(self.features(batch))
        h = tape.affine(X, leaves["node.W"], leaves["node.b"])
        # sum of incident edge encodings: (sum of features) W_e + (edge count) b_e
        he = tape.add(
            tape.matmul(tape.constant(batch.edge_sum), leaves["edge.W"]),
            tape.matmul(tape.constant(batch.edge_count), leaves["edge.b"]),
        )
        for k in range(self.arch["layers"]):
            agg = tape.add(tape.spmm(batch.S, h), he)
            z = tape.relu(tape.affine(agg, leaves[f"gin{k}.W1"], leaves[f"gin{k}.b1"]))
            h = tape.relu(tape.affine(z, leaves[f"gin{k}.W2"], leaves[f"gin{k}.b2"]))
        return self._head(tape, leaves, tape.spmm(batch.pool, h))


class MlpModel(WeightModel):
    """Mean-pooled node features through four linear+ReLU layers; ignores topology."""

    kind = "mlp"

    def __init__(self, layers: int = 4, dim: int = 50, seed: int = 0):
        rng = np.random.default_rng(seed)
        params = {}
        fan = N_FEATURES
        for k in range(layers):
            params[f"mlp{k}.W"] = _glorot(rng, fan, dim)
            params[f"mlp{k}.b"] = np.zeros((1, dim))
            fan = dim
        params["head.W"] = _glorot(rng, dim, 1)
        params["head.b"] = np.zeros((1, 1))
        super().__init__(params, {"layers": layers, "dim": dim}, seed)

    def forward(self, batch, tape, leaves):
        h = tape.spmm(batch.pool, tape.constant(self.features(batch)))
        for k in range(self.arch["layers"]):
            h = tape.relu(tape.affine(h, leaves[f"mlp{k}.W"], leaves[f"mlp{k}.b"]))
        return self._head(tape, leaves, h)


MODELS = {"gin": GinModel, "mlp": MlpModel}


def load_model(path) -> WeightModel:
    d = json.loads(Path(path).read_text())
    return model_from_dict(d)


def model_from_dict(d: dict) -> WeightModel:
    cls = MODELS[d["model"]]
    params = {k: _untensor(v) for k, v in d["params"].items()}
    buffers = {k: _untensor(v) for k, v in d["buffers"].items()}
    ref = cls(seed=d["seed"], **d["architecture"])
    if set(params) != set(ref.params) or any(params[k].shape != ref.params[k].shape for k in params):
        raise ValueError("checkpoint parameters do not match the architecture")
    return cls._from(d["architecture"], params, d["seed"], buffers)


def gin_forward(model: WeightModel, sub: EdgeSubgraph) -> float:
    return float(model.predict(SubgraphBatch([sub]))[0])


def mlp_baseline_forward(model: MlpModel, sub: EdgeSubgraph) -> float:
    return float(model.predict(SubgraphBatch([sub]))[0])


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainConfig:
    coarsening: CoarseningConfig
    loss: LossSpec
    epochs: int = 50
    lr: float = 1e-3
    batch: int = 600
    seed: int = 0
    crossing_feature: str = "weight"
    normalize: bool = True
    head_init: str = "induced"  # or "zero"
    update: str = "batch"  # or "epoch"


class Instance:
    """A graph with its coarsening, loss context and subgraph batches."""

    def __init__(self, g: WeightedGraph, ccfg: CoarseningConfig, spec: LossSpec, batch: int = 600,
                 crossing_feature: str = "weight", result: CoarseningResult | None = None):
        self.g = g
        self.result = coarsen(g, ccfg) if result is None else result
        tv = make_test_vectors(g, spec, self.result.partition)
        self.ctx = LossContext(g, self.result, spec, tv)
        self.subs = extract_edge_subgraphs(g, self.result, crossing_feature)
        self.all = SubgraphBatch(self.subs)
        m = len(self.subs)
        self.chunks = [np.arange(i, min(i + batch, m)) for i in range(0, m, batch)]
        self.batches = [SubgraphBatch([self.subs[j] for j in c]) for c in self.chunks]

    @property
    def induced_weights(self) -> np.ndarray:
        return self.result.coarse.w.copy()

    def loss(self, model: WeightModel) -> float:
        return self.ctx.value(model.predict(self.all))

    def loss_before(self) -> float:
        return self.ctx.value(self.induced_weights)


@dataclass
class History:
    train_loss: list[tuple[int, int, float]] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_val: float = math.inf
    best_step: int = -1
    seconds: float = 0.0
    aborted: bool = False


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


def _mean_loss(model, instances) -> float:
    return float(np.mean([inst.loss(model) for inst in instances])) if instances else math.nan


def train(model: WeightModel, train_graphs, val_graphs, cfg: TrainConfig) -> tuple[WeightModel, History]:
    """Fit ``model`` on ``train_graphs`` one graph after the other.

    The coarse edges of a graph are split into batches of ``cfg.batch``
    subgraphs.  With ``update="batch"`` every batch makes one Adam step: all
    coarse weights are predicted with the current parameters, the loss
    gradient at those weights is pushed back through the batch part of the
    network.  With ``update="epoch"`` the gradients of all batches at the same
    parameters are summed into one step per epoch, the exact gradient of
    the full loss at a fraction of the cost (one forward pass per epoch
    instead of one per batch).  The two coincide when a graph fits in one
    batch.

    The recorded training loss is the loss after each epoch.  The returned
    model is the one with the lowest mean validation loss after any epoch
    (the lowest training loss if there are no validation graphs).
    """
    if not train_graphs:
        raise ValueError("need at least one training graph")
    if not cfg.loss.kind.differentiable:
        raise ValueError("cannot train on a non-differentiable loss")
    if cfg.head_init not in ("induced", "zero"):
        raise ValueError("head_init must be 'induced' or 'zero'")
    if cfg.update not in ("batch", "epoch"):
        raise ValueError("update must be 'batch' or 'epoch'")
    t0 = time.perf_counter()

    def prep(graphs):
        return [g if isinstance(g, Instance) else Instance(g, cfg.coarsening, cfg.loss, cfg.batch, cfg.crossing_feature) for g in graphs]

    tr, va = prep(train_graphs), prep(val_graphs)
    if cfg.normalize and not model.normalization_fitted:
        # a fresh model: fit the input scaler, then start predictions at the induced weights
        model.fit_normalization([inst.all for inst in tr])
        if cfg.head_init == "induced":
            model.init_head_bias([inst.all for inst in tr], [inst.induced_weights for inst in tr])
    opt = Adam(model.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    best = model.copy()
    step = 0

    def finite_loss(inst, w) -> float:
        return inst.ctx.value(w) if np.all(np.isfinite(w)) else math.nan

    for gi, inst in enumerate(tr):
        for epoch in range(cfg.epochs):
            if cfg.update == "epoch":
                recs = [model.record(b) for b in inst.batches]
                w = np.concatenate([r[0] for r in recs])
                if np.all(np.isfinite(w)):
                    dw = inst.ctx.gradient(w)
                    total = None
                    for idx, (_, backward) in zip(inst.chunks, recs):
                        g = backward(dw[idx])
                        total = g if total is None else {k: total[k] + g[k] for k in total}
                    opt.step(model.params, total)
                del recs
            else:
                for bi in rng.permutation(len(inst.chunks)):
                    w = model.predict(inst.all)
                    if not np.all(np.isfinite(w)):
                        break
                    _, grads = model.value_and_grad(inst.batches[bi], inst.ctx.gradient(w)[inst.chunks[bi]])
                    opt.step(model.params, grads)
            cur = finite_loss(inst, model.predict(inst.all))
            hist.train_loss.append((gi, epoch, cur))
            if not math.isfinite(cur):
                hist.aborted = True
                hist.seconds = time.perf_counter() - t0
                raise TrainingDiverged(f"non-finite training loss on graph {gi}, epoch {epoch}", hist)
            val = _mean_loss(model, va) if va else cur
            hist.val_loss.append(val)
            if val < hist.best_val:
                hist.best_val = val
                hist.best_step = step
                best = model.copy()
            step += 1
            log.debug("graph %d epoch %d: train %.5f val %.5f", gi, epoch, cur, val)
    hist.seconds = time.perf_counter() - t0
    return best, hist


@dataclass
class ApplyResult:
    result: CoarseningResult
    weights: np.ndarray
    loss_before: float
    loss_after: float

    @property
    def improvement_pct(self) -> float:
        return improvement_pct(self.loss_before, self.loss_after)


def apply(model: WeightModel, g: WeightedGraph, ccfg: CoarseningConfig, spec: LossSpec,
          crossing_feature: str = "weight", result: CoarseningResult | None = None) -> ApplyResult:
    """Coarsen ``g``, predict every coarse weight and compare ``spec`` before and after."""
    result = coarsen(g, ccfg) if result is None else result
    if result.coarse.m == 0:
        return ApplyResult(result, np.zeros(0), 0.0, 0.0)
    subs = extract_edge_subgraphs(g, result, crossing_feature)
    w = model.predict(SubgraphBatch(subs))
    tv = make_test_vectors(g, spec, result.partition)
    ctx = LossContext(g, result, spec, tv)
    before = ctx.value(result.coarse.w)
    after = ctx.value(w)
    new = CoarseningResult(
        original=g,
        coarse=result.coarse.with_weights(w),
        partition=result.partition,
        algorithm=result.algorithm,
        ratio=result.ratio,
        metadata={**result.metadata, "weights": model.kind},
    )
    return ApplyResult(new, w, before, after)


__all__ = [
    "Adam",
    "ApplyResult",
    "EdgeSubgraph",
    "GinModel",
    "History",
    "Instance",
    "LossKind",
    "MlpModel",
    "SubgraphBatch",
    "TrainConfig",
    "apply",
    "extract_edge_subgraphs",
    "gin_forward",
    "ldp_features",
    "load_model",
    "mlp_baseline_forward",
    "train",
]
