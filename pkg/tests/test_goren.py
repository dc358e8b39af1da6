"""Edge subgraphs, LDP features, the GIN and MLP weight models, training and application."""
import json
import time

import numpy as np
import pytest

from graphcoarsen.coarsening import CoarseningConfig, coarsen
from graphcoarsen.datagen import generate
from graphcoarsen.goren import (
    Adam,
    EdgeSubgraph,
    GinModel,
    Instance,
    MlpModel,
    SubgraphBatch,
    TrainConfig,
    TrainingDiverged,
    apply,
    extract_edge_subgraphs,
    gin_forward,
    ldp_features,
    load_model,
    mlp_baseline_forward,
    model_from_dict,
    train,
)
from graphcoarsen.graph import Partition, WeightedGraph
from graphcoarsen.losses import LossContext, LossSpec, make_test_vectors

from helpers import (
    cycle_graph,
    fd_mismatch,
    model_fd_check,
    path_graph,
    random_connected_graph,
    random_connected_partition,
    result_of,
    toy_graph,
    toy_result,
)

TOY_CFG = CoarseningConfig("heavy_edge", 0.5)


def star(leaves):
    return WeightedGraph(leaves + 1, [(0, i, 1.0) for i in range(1, leaves + 1)])


def test_ldp_examples():
    f = ldp_features(star(3))
    assert f[0].tolist() == [3, 1, 1, 1, 0]
    assert f[1].tolist() == [1, 3, 3, 3, 0]
    assert ldp_features(path_graph(3))[1].tolist() == [2, 1, 1, 1, 0]
    iso = ldp_features(WeightedGraph(3, [(0, 1, 5.0)]))
    assert iso[2].tolist() == [0, 0, 0, 0, 0]
    # unweighted: the weight 5 does not enter
    assert iso[0].tolist() == [1, 1, 1, 1, 0]


def test_ldp_std_is_population():
    # vertex 0 sees neighbor degrees 1 and 3
    g = WeightedGraph(5, [(0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0), (2, 4, 1.0)])
    assert ldp_features(g)[0].tolist() == [2, 1, 3, 2, 1]


def test_toy_subgraph():
    subs = extract_edge_subgraphs(toy_graph(), toy_result())
    assert len(subs) == 1
    s = subs[0]
    assert s.coarse_edge == (0, 1) and s.graph.n == 6 and s.graph.m == 7
    assert s.node_features.shape == (6, 5) and s.edge_features.shape == (7, 1)


def test_no_coarse_edges():
    g = path_graph(4)
    res = result_of(g, Partition(np.zeros(4, dtype=int), 1))
    assert extract_edge_subgraphs(g, res) == []


def test_edge_count_intra_plus_crossing():
    # two triangles joined by a single edge (2, 3)
    edges = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 0.5)]
    g = WeightedGraph(6, edges)
    s = extract_edge_subgraphs(g, result_of(g, Partition([0, 0, 0, 1, 1, 1])))[0]
    assert s.graph.m == 3 + 3 + 1
    assert sorted(s.edge_features[:, 0]) == [0.5] + [1.0] * 6
    one = extract_edge_subgraphs(g, result_of(g, Partition([0, 0, 0, 1, 1, 1])), crossing_feature="one")[0]
    assert sorted(one.edge_features[:, 0]) == [1.0] * 7


def test_subgraph_excludes_other_clusters():
    g = path_graph(6)
    res = result_of(g, Partition([0, 0, 1, 1, 2, 2]))
    subs = extract_edge_subgraphs(g, res)
    assert [s.coarse_edge for s in subs] == [(0, 1), (1, 2)]
    assert subs[0].vertices.tolist() == [0, 1, 2, 3]
    assert subs[0].graph.edges == [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]


@pytest.mark.parametrize("cls", [GinModel, MlpModel])
def test_floor_at_one(cls):
    sub = extract_edge_subgraphs(toy_graph(), toy_result())[0]
    m = cls(seed=1)
    m.params["head.W"][:] = 0.0
    m.params["head.b"][:] = -1.0
    assert gin_forward(m, sub) == 1.0
    m.zero_head()
    assert gin_forward(m, sub) == 1.0
    m.params["head.b"][:] = 2.5
    assert gin_forward(m, sub) == 3.5


def permuted_subgraph(sub, perm):
    g2 = sub.graph.relabel(perm)
    feat = {(int(perm[a]), int(perm[b])) if perm[a] < perm[b] else (int(perm[b]), int(perm[a])): f
            for (a, b, _), f in zip(sub.graph.edges, sub.edge_features[:, 0])}
    ef = np.array([[feat[(a, b)]] for a, b, _ in g2.edges])
    return EdgeSubgraph(sub.coarse_edge, sub.vertices[np.argsort(perm)], g2, ldp_features(g2), ef)


def test_vertex_order_invariance():
    rng = np.random.default_rng(0)
    g = random_connected_graph(rng, 20, p=0.3)
    res = result_of(g, random_connected_partition(rng, g, 6))
    sub = max(extract_edge_subgraphs(g, res), key=lambda s: s.graph.m)
    m = GinModel(seed=3)
    m.params["head.W"] = np.abs(m.params["head.W"])
    base = gin_forward(m, sub)
    assert base > 1.0
    for _ in range(5):
        perm = rng.permutation(sub.graph.n)
        assert gin_forward(m, permuted_subgraph(sub, perm)) == pytest.approx(base, rel=1e-12)


def test_determinism_and_parameter_layout():
    a, b = GinModel(seed=7), GinModel(seed=7)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["node.W"], GinModel(seed=8).params["node.W"])
    assert a.n_parameters() == 5 * 50 + 50 + 50 + 50 + 3 * (2 * 50 * 50 + 2 * 50) + 50 + 1
    bound = np.sqrt(6 / (50 + 50))
    assert np.abs(a.params["gin0.W1"]).max() <= bound
    assert not a.params["gin0.b1"].any()
    sub = extract_edge_subgraphs(toy_graph(), toy_result())[0]
    assert gin_forward(a, sub) == gin_forward(b, sub)


@pytest.mark.parametrize("cls", [GinModel, MlpModel])
def test_checkpoint_roundtrip_bit_exact(cls, tmp_path):
    g = random_connected_graph(np.random.default_rng(1), 30, p=0.2)
    inst = Instance(g, TOY_CFG, LossSpec("quad", k=5))
    m = cls(seed=2)
    m.fit_normalization([inst.all])
    m.init_head_bias([inst.all], [inst.induced_weights])
    m.save(tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert type(back) is cls
    for k in m.params:
        assert np.array_equal(m.params[k], back.params[k])
    assert np.array_equal(m.predict(inst.all), back.predict(inst.all))
    back.save(tmp_path / "again.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "again.json").read_bytes()


def test_checkpoint_architecture_mismatch():
    d = GinModel(seed=0).to_dict()
    d["architecture"]["dim"] = 20
    with pytest.raises(ValueError):
        model_from_dict(d)
    d = json.loads(json.dumps(MlpModel(seed=0).to_dict()))
    assert isinstance(model_from_dict(d), MlpModel)


def test_mlp_is_blind_to_topology():
    # C6 with two different weightings: identical LDP multisets, different edge features
    g1 = cycle_graph(6)
    g2 = WeightedGraph(6, [(a, b, 1.0 + a) for a, b, _ in g1.edges])
    s1 = EdgeSubgraph((0, 1), np.arange(6), g1, ldp_features(g1), g1.w[:, None])
    s2 = EdgeSubgraph((0, 1), np.arange(6), g2, ldp_features(g2), g2.w[:, None])
    # and a different topology with the same multiset: two triangles
    g3 = WeightedGraph(6, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)])
    s3 = EdgeSubgraph((0, 1), np.arange(6), g3, ldp_features(g3), g3.w[:, None])
    mlp = MlpModel(seed=0)
    mlp.params["head.b"][:] = 3.0
    assert mlp_baseline_forward(mlp, s1) == mlp_baseline_forward(mlp, s2) == mlp_baseline_forward(mlp, s3)
    gin = GinModel(seed=0)
    gin.params["head.b"][:] = 3.0
    assert gin_forward(gin, s1) != gin_forward(gin, s2)


def small_instance(seed=0, n=10, nc=5, kind="quad"):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, n, p=0.35)
    res = result_of(g, random_connected_partition(rng, g, nc))
    return Instance(g, TOY_CFG, LossSpec(kind, k=4, seed=seed), result=res)


@pytest.mark.parametrize("cls", [GinModel, MlpModel])
def test_end_to_end_gradient(cls):
    inst = small_instance(4)
    m = cls(seed=5)
    m.fit_normalization([inst.all])
    m.init_head_bias([inst.all], [inst.induced_weights])
    pairs = model_fd_check(m, inst.ctx, inst.all)
    assert np.abs(pairs["head.W"][0]).max() > 0
    assert fd_mismatch(pairs) <= 0.0


def test_training_decreases_on_toy():
    spec = LossSpec("quad", k=3)
    inst = Instance(toy_graph(), TOY_CFG, spec, result=toy_result())
    for seed in range(3):
        m = GinModel(seed=seed)
        # a single subgraph makes every Adam step coherent; a small step keeps the head active
        best, hist = train(m, [inst], [], TrainConfig(TOY_CFG, spec, epochs=10, lr=3e-5, seed=seed))
        losses = [x[2] for x in hist.train_loss]
        assert all(b <= a + 1e-12 for a, b in zip(losses[:5], losses[1:5]))
        assert inst.loss(best) < inst.loss_before()
        after = apply(best, toy_graph(), TOY_CFG, spec, result=toy_result())
        assert after.loss_after <= after.loss_before
        assert hist.best_val == pytest.approx(min(losses))


@pytest.mark.parametrize("cls", [GinModel, MlpModel])
def test_zero_head_gives_unit_weight_loss(cls):
    g = random_connected_graph(np.random.default_rng(3), 40, p=0.15)
    m = cls(seed=0)
    m.zero_head()
    spec = LossSpec("quad", k=6)
    res = apply(m, g, TOY_CFG, spec)
    assert np.all(res.weights == 1.0)
    ctx = LossContext(g, res.result, spec, make_test_vectors(g, spec))
    assert res.loss_after == ctx.value(np.ones(res.weights.size))
    assert res.improvement_pct == pytest.approx(100 * (res.loss_before - res.loss_after) / res.loss_before)
    assert res.result.coarse.w.tolist() == [1.0] * res.weights.size


def test_head_init_starts_at_induced_mean():
    inst = small_instance(1, n=30, nc=12)
    m = GinModel(seed=0)
    m.fit_normalization([inst.all])
    m.init_head_bias([inst.all], [inst.induced_weights])
    z = m.predict_raw(inst.all)
    assert 1.0 + z.mean() == pytest.approx(inst.induced_weights.mean())


def test_train_validation_and_errors():
    inst = small_instance(2)
    spec = inst.ctx.spec
    with pytest.raises(ValueError):
        train(GinModel(), [], [], TrainConfig(TOY_CFG, spec))
    with pytest.raises(ValueError):
        train(GinModel(), [inst], [], TrainConfig(TOY_CFG, LossSpec("eigenerror", k=2)))
    with pytest.raises(TrainingDiverged) as err, np.errstate(all="ignore"):
        train(GinModel(seed=0), [inst], [], TrainConfig(TOY_CFG, spec, epochs=3, lr=float("inf")))
    assert err.value.history.aborted


def test_best_checkpoint_tracks_validation():
    tr, va = small_instance(3, n=24, nc=10), small_instance(4, n=24, nc=10)
    best, hist = train(GinModel(seed=1), [tr], [va], TrainConfig(TOY_CFG, tr.ctx.spec, epochs=6))
    assert len(hist.val_loss) == 6
    assert va.loss(best) == pytest.approx(min(hist.val_loss))


def test_relabeling_original_graph_keeps_predictions():
    rng = np.random.default_rng(9)
    g = random_connected_graph(rng, 30, p=0.2)
    p = random_connected_partition(rng, g, 10)
    perm = rng.permutation(g.n)
    assign = np.empty(g.n, dtype=np.int64)
    assign[perm] = p.assign
    r1, r2 = result_of(g, p), result_of(g.relabel(perm), Partition(assign, p.n_coarse))
    m = GinModel(seed=2)
    b1 = SubgraphBatch(extract_edge_subgraphs(g, r1))
    m.fit_normalization([b1])
    m.init_head_bias([b1], [r1.coarse.w])
    a = m.predict(b1)
    b = m.predict(SubgraphBatch(extract_edge_subgraphs(g.relabel(perm), r2)))
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_batch_time_scales_linearly():
    g = generate("WS", 4000, 0)
    subs = extract_edge_subgraphs(g, coarsen(g, CoarseningConfig("bl", 0.5)))
    edges = np.cumsum([s.graph.m for s in subs])
    half = int(np.searchsorted(edges, edges[-1] / 2))
    small, big = SubgraphBatch(subs[:half]), SubgraphBatch(subs)
    m = GinModel(seed=0)
    m.params["head.b"][:] = 1.0

    def best_time(batch):
        seed = np.ones(batch.size)
        times = []
        for _ in range(5):
            t = time.perf_counter()
            m.value_and_grad(batch, seed)
            times.append(time.perf_counter() - t)
        return min(times)

    best_time(small)
    ratio = best_time(big) / best_time(small)
    assert big.n_edges / small.n_edges == pytest.approx(2.0, rel=0.01)
    assert ratio < 2.5


def test_recorded_backward_is_reusable():
    inst = small_instance(2)
    m = GinModel(seed=1)
    m.fit_normalization([inst.all])
    m.init_head_bias([inst.all], [inst.induced_weights])
    w, backward = m.record(inst.all)
    seed = inst.ctx.gradient(w)
    first = backward(seed)
    again = backward(seed)
    for k in first:
        np.testing.assert_array_equal(first[k], again[k])
    _, direct = m.value_and_grad(inst.all, seed)
    for k in first:
        np.testing.assert_array_equal(first[k], direct[k])


def test_update_schedules_agree_on_a_single_batch():
    spec = LossSpec("quad", k=3)
    inst = Instance(toy_graph(), TOY_CFG, spec, result=toy_result())
    runs = []
    for update in ("batch", "epoch"):
        best, hist = train(GinModel(seed=3), [inst], [], TrainConfig(TOY_CFG, spec, epochs=4, lr=3e-5, seed=0, update=update))
        runs.append((best, hist))
    np.testing.assert_allclose([x[2] for x in runs[0][1].train_loss], [x[2] for x in runs[1][1].train_loss], rtol=1e-12)
    for k in runs[0][0].params:
        np.testing.assert_allclose(runs[0][0].params[k], runs[1][0].params[k], rtol=1e-10, atol=1e-14)


def test_epoch_update_uses_the_full_gradient():
    # one epoch step equals one Adam step along the summed batch gradients of the full loss
    g = random_connected_graph(np.random.default_rng(8), 30, p=0.2)
    spec = LossSpec("quad", k=4)
    cfg = TrainConfig(TOY_CFG, spec, epochs=1, batch=5, seed=0, update="epoch")
    inst = Instance(g, TOY_CFG, spec, batch=5)
    assert len(inst.chunks) > 2
    m = GinModel(seed=2)
    m.fit_normalization([inst.all])
    m.init_head_bias([inst.all], [inst.induced_weights])
    ref = m.copy()
    best, _ = train(m, [inst], [], cfg)
    _, grads = ref.value_and_grad(inst.all, inst.ctx.gradient(ref.predict(inst.all)))
    Adam(ref.params, lr=cfg.lr).step(ref.params, grads)
    for k in ref.params:
        np.testing.assert_allclose(m.params[k], ref.params[k], rtol=1e-9, atol=1e-12)
