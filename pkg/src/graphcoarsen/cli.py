"""Command-line entry point ``graphcoarsen``.

All randomness of one invocation derives from ``--seed``: each component
(generator, coarsener, loss sampling, model init, training order) gets its
own child seed, so changing one component never shifts another's stream.

CSV outputs (fixed column order, floats in round-trip ``repr`` form)::

    coarsen   algorithm,ratio,n,n_coarse
    evaluate  graph,algorithm,ratio,loss,k,seed,loss_before,loss_after,improvement_pct
    sweep     same columns as evaluate
    optimize  iteration,objective
    eigs      index,eigenvalue
    train     graph,epoch,train_loss,val_loss
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import datagen
from .coarsening import ALGORITHMS, CoarseningConfig, CoarseningError, canonical_algorithm, coarsen
from .graph import CoarseningResult, GraphError
from .io import graph_from_dict, load_graph, load_result, save_graph, save_result
from .losses import LossContext, LossKind, LossSpec, improvement_pct, make_test_vectors
from .operators import OperatorKind, laplacian
from .spectral import eigen_smallest_k

log = logging.getLogger("graphcoarsen")

EVAL_COLUMNS = ["graph", "algorithm", "ratio", "loss", "k", "seed", "loss_before", "loss_after", "improvement_pct"]
LOSSES = tuple(k.value for k in LossKind)


class UsageError(Exception):
    pass


def derive_seed(root: int, component: str) -> int:
    """Child seed of ``root`` for a named component (stable across runs and platforms)."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=(zlib.crc32(component.encode()),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(rows, columns, out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    _emit(buf.getvalue(), out)


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _coarsening_config(args, seed: int) -> CoarseningConfig:
    return CoarseningConfig(
        algorithm=args.alg,
        ratio=args.ratio,
        q_vectors=args.q_vectors,
        relaxation_sweeps=args.sweeps,
        seed=derive_seed(seed, "coarsen"),
    )


def _loss_spec(name: str, k: int, seed: int) -> LossSpec:
    return LossSpec(LossKind.parse(name), k, derive_seed(seed, "loss"))


def _algorithm(name: str) -> str:
    try:
        return canonical_algorithm(name)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_coarsen_flags(p, alg_default="heavy_edge"):
    p.add_argument("--alg", "--coarsener", dest="alg", default=alg_default, type=_algorithm, choices=ALGORITHMS)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--q-vectors", type=int, default=10)
    p.add_argument("--sweeps", type=int, default=20)


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    g = datagen.generate(args.model, args.n, derive_seed(args.seed, "generate"))
    save_graph(g, args.out, args.format)
    print(f"{args.model},{args.n},{g.n},{g.m}")
    return 0


def cmd_coarsen(args) -> int:
    g = load_graph(args.graph)
    res = coarsen(g, _coarsening_config(args, args.seed))
    if args.out:
        save_result(res, args.out)
    _write_csv([{"algorithm": res.algorithm, "ratio": res.ratio, "n": g.n, "n_coarse": res.n_coarse}],
               ["algorithm", "ratio", "n", "n_coarse"], args.summary)
    return 0


def _evaluate_row(g, res: CoarseningResult, loss: str, k: int, seed: int, label: str, after_weights=None) -> dict:
    spec = _loss_spec(loss, min(k, g.n), seed)
    if spec.kind is LossKind.EIGENERROR:
        spec = LossSpec(spec.kind, min(k, res.n_coarse - 1), spec.seed)
    if res.coarse.m == 0:
        before = after = 0.0
    else:
        tv = make_test_vectors(g, spec, res.partition)
        ctx = LossContext(g, res, spec, tv)
        before = ctx.value(res.coarse.w)
        after = before if after_weights is None else ctx.value(after_weights)
    return {
        "graph": label,
        "algorithm": res.algorithm,
        "ratio": float(res.ratio),
        "loss": spec.kind.value,
        "k": spec.k,
        "seed": seed,
        "loss_before": float(before),
        "loss_after": float(after),
        "improvement_pct": float(improvement_pct(before, after)),
    }


def cmd_evaluate(args) -> int:
    from .goren import extract_edge_subgraphs, load_model, SubgraphBatch

    g = load_graph(args.graph)
    if args.result:
        res = load_result(args.result, original=g)
    else:
        res = coarsen(g, _coarsening_config(args, args.seed))
    after = None
    if args.after:
        if not Path(args.after).exists():
            raise UsageError(f"checkpoint {args.after} does not exist")
        model = load_model(args.after)
        if res.coarse.m:
            after = model.predict(SubgraphBatch(extract_edge_subgraphs(g, res)))
    rows = [_evaluate_row(g, res, loss, args.k, args.seed, Path(args.graph).name, after) for loss in args.loss]
    _write_csv(rows, EVAL_COLUMNS, args.out)
    return 0


def _read_target(path, n: int) -> np.ndarray:
    vals = []
    with open(path) as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                vals.append(float(row[-1]))
            except ValueError:
                continue  # header
    if len(vals) < n:
        raise UsageError(f"{path} has {len(vals)} eigenvalues, need {n}")
    return np.array(vals[:n])


def cmd_optimize(args) -> int:
    from .weight_opt import mm_optimize, original_target

    res = load_result(args.result)
    cg = res.coarse
    lam = _read_target(args.target_eigs, cg.n) if args.target_eigs else original_target(res.original, cg.n)
    out = mm_optimize(cg, lam, tol=args.tol, max_iter=args.max_iter, complete=args.complete)
    rows = [{"iteration": i, "objective": float(v)} for i, v in enumerate(out.trace)]
    _write_csv(rows, ["iteration", "objective"], args.trace)
    if args.out:
        new = CoarseningResult(res.original, out.graph, res.partition, res.algorithm, res.ratio,
                               {**res.metadata, "weights": "mm", "mm_converged": out.converged})
        save_result(new, args.out)
    return 0


def _training_graphs(args):
    seed = derive_seed(args.seed, "generate")
    if args.synthetic:
        train, val, test = datagen.experiment_split(args.synthetic, seed)
        return train[: args.n_train], val
    if args.graphs:
        train = [load_graph(p) for p in args.graphs]
        val = [load_graph(p) for p in (args.val or [])]
        return train, val
    if args.walk_source:
        g = load_graph(args.walk_source)
        subs = datagen.random_walk_bootstrap(g, args.n_train + args.n_val, args.walk_len, seed)
        subs = [s.largest_component() for s in subs]
        return subs[: args.n_train], subs[args.n_train :]
    raise UsageError("give training graphs with --graphs, --synthetic or --walk-source")


def cmd_train(args) -> int:
    from .goren import MODELS, TrainConfig, train

    train_g, val_g = _training_graphs(args)
    ccfg = _coarsening_config(args, args.seed)
    spec = _loss_spec(args.loss, args.k, args.seed)
    model = MODELS[args.arch](seed=derive_seed(args.seed, "model"))
    cfg = TrainConfig(ccfg, spec, epochs=args.epochs, lr=args.lr, batch=args.batch,
                      update=args.update, seed=derive_seed(args.seed, "train"))
    best, hist = train(model, train_g, val_g, cfg)
    best.save(args.checkpoint)
    rows = [
        {"graph": gi, "epoch": ep, "train_loss": float(tl), "val_loss": float(vl)}
        for (gi, ep, tl), vl in zip(hist.train_loss, hist.val_loss)
    ]
    _write_csv(rows, ["graph", "epoch", "train_loss", "val_loss"], args.history)
    return 0


def cmd_apply(args) -> int:
    from .goren import apply, load_model

    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint {args.checkpoint} does not exist")
    model = load_model(args.checkpoint)
    g = load_graph(args.graph)
    spec = _loss_spec(args.loss, min(args.k, g.n), args.seed)
    res = coarsen(g, _coarsening_config(args, args.seed))
    if spec.kind is LossKind.EIGENERROR:
        spec = LossSpec(spec.kind, min(spec.k, res.n_coarse - 1), spec.seed)
    out = apply(model, g, None, spec, result=res)
    if args.out:
        save_result(out.result, args.out)
    row = {
        "graph": Path(args.graph).name, "algorithm": res.algorithm, "ratio": float(res.ratio), "loss": spec.kind.value,
        "k": spec.k, "seed": args.seed, "loss_before": float(out.loss_before), "loss_after": float(out.loss_after),
        "improvement_pct": float(out.improvement_pct),
    }
    _write_csv([row], EVAL_COLUMNS, args.summary)
    return 0


def cmd_eigs(args) -> int:
    path = Path(args.graph)
    d = json.loads(path.read_text()) if path.suffix == ".json" else {}
    g = graph_from_dict(d["coarse"]) if "assign" in d else load_graph(path)
    kind = OperatorKind.parse(args.operator)
    k = min(args.k, g.n)
    vals = eigen_smallest_k(laplacian(g, kind), k, seed=derive_seed(args.seed, "eigs")).eigenvalues
    _write_csv([{"index": i + 1, "eigenvalue": float(v)} for i, v in enumerate(vals)], ["index", "eigenvalue"], args.out)
    return 0


# ---------------------------------------------------------------- sweep


def parse_config(text: str) -> dict[str, list[str]]:
    """``key = v1, v2`` lines; ``#`` comments.  Keys mirror the CLI flags."""
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        cfg[key.replace("-", "_")] = [v.strip() for v in val.split(",") if v.strip()]
    return cfg


def _sweep_cells(cfg: dict) -> list[dict]:
    graphs = cfg.get("graphs", [])
    if not graphs:
        raise UsageError("sweep config needs 'graphs'")
    algs = [canonical_algorithm(a) for a in cfg.get("algorithms", ["heavy_edge"])]
    ratios = [float(r) for r in cfg.get("ratios", ["0.5"])]
    losses = [LossKind.parse(x).value for x in cfg.get("losses", ["quad"])]
    seeds = [int(s) for s in cfg.get("seeds", ["0"])]
    k = int(cfg.get("k", ["40"])[0])
    cells = []
    for gpath in graphs:
        for a in algs:
            for r in ratios:
                for loss in losses:
                    for s in seeds:
                        cells.append({"graph": gpath, "algorithm": a, "ratio": r, "loss": loss, "seed": s, "k": k})
    return cells


def _cell_key(graph, algorithm, ratio, loss, seed) -> tuple:
    return (Path(str(graph)).name, str(algorithm), repr(float(ratio)), str(loss), str(int(seed)))


def _run_cell(cell: dict, checkpoint: str | None) -> dict:
    g = load_graph(cell["graph"])
    ccfg = CoarseningConfig(cell["algorithm"], cell["ratio"], seed=derive_seed(cell["seed"], "coarsen"))
    res = coarsen(g, ccfg)
    after = None
    if checkpoint:
        from .goren import SubgraphBatch, extract_edge_subgraphs, load_model

        if res.coarse.m:
            after = load_model(checkpoint).predict(SubgraphBatch(extract_edge_subgraphs(g, res)))
    return _evaluate_row(g, res, cell["loss"], cell["k"], cell["seed"], Path(cell["graph"]).name, after)


def cmd_sweep(args) -> int:
    cfg = parse_config(Path(args.config).read_text())
    cells = _sweep_cells(cfg)
    checkpoint = cfg.get("checkpoint", [None])[0]
    out = Path(args.out)
    done = set()
    if out.exists() and out.stat().st_size:
        with out.open() as fh:
            for row in csv.DictReader(fh):
                done.add(_cell_key(row["graph"], row["algorithm"], row["ratio"], row["loss"], row["seed"]))
    todo = [c for c in cells if _cell_key(c["graph"], c["algorithm"], c["ratio"], c["loss"], c["seed"]) not in done]
    width = args.workers or int(cfg.get("workers", ["1"])[0])
    cap = os.environ.get("COARSEN_THREADS")
    if cap:
        width = min(width, max(1, int(cap)))
    with ThreadPoolExecutor(max_workers=max(1, width)) as pool:
        futures = [pool.submit(_run_cell, c, checkpoint) for c in todo]
        # rows are written in cell order, each as soon as it and its predecessors finished
        write_header = not done
        with out.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if write_header:
                w.writerow(EVAL_COLUMNS)
            for f in futures:
                row = f.result()
                w.writerow([_fmt(row[c]) for c in EVAL_COLUMNS])
                fh.flush()
    log.info("sweep: %d cells run, %d skipped", len(todo), len(cells) - len(todo))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphcoarsen", description="Spectrum-preserving graph coarsening toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic graph")
    p.add_argument("--model", required=True, choices=datagen.MODELS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("edgelist", "json"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("coarsen", help="coarsen a graph and write the result JSON")
    p.add_argument("graph")
    _add_coarsen_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="result JSON path")
    p.add_argument("--summary", help="CSV summary path (default stdout)")
    p.set_defaults(func=cmd_coarsen)

    p = sub.add_parser("evaluate", help="loss of a coarsening before and after re-weighting")
    p.add_argument("graph")
    _add_coarsen_flags(p)
    p.add_argument("--result", help="use this result JSON instead of coarsening")
    p.add_argument("--loss", nargs="+", default=["quad"], choices=LOSSES)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--after", help="checkpoint whose predicted weights give loss_after")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize-weights", help="fit coarse weights to a target spectrum")
    p.add_argument("result")
    p.add_argument("--target-eigs", help="CSV whose last column lists target eigenvalues")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--complete", action="store_true", help="optimize over all vertex pairs")
    p.add_argument("--trace", help="per-iteration objective CSV (default stdout)")
    p.add_argument("--out", help="result JSON with optimized weights")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train", help="train a weight-assignment model")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--graphs", nargs="+")
    src.add_argument("--synthetic", choices=datagen.MODELS)
    src.add_argument("--walk-source", help="bootstrap training graphs by random walks on this graph")
    p.add_argument("--val", nargs="*")
    p.add_argument("--n-train", type=int, default=5)
    p.add_argument("--n-val", type=int, default=5)
    p.add_argument("--walk-len", type=int, default=5000)
    _add_coarsen_flags(p, alg_default="bl")
    p.add_argument("--loss", default="quad", choices=[x for x in LOSSES if x != "eigenerror"])
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=600)
    p.add_argument("--update", choices=("batch", "epoch"), default="batch",
                   help="one Adam step per batch, or one per epoch on the summed gradient")
    p.add_argument("--arch", choices=("gin", "mlp"), default="gin")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", help="training history CSV (default stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("apply", help="coarsen a graph and re-weight it with a trained model")
    p.add_argument("graph")
    _add_coarsen_flags(p, alg_default="bl")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--loss", default="quad", choices=LOSSES)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="result JSON with predicted weights")
    p.add_argument("--summary", help="CSV row path (default stdout)")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eigs", help="smallest Laplacian eigenvalues as CSV")
    p.add_argument("graph", help="graph file or coarsening result JSON")
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--operator", default="combinatorial", choices=("combinatorial", "normalized", "doubly_weighted"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eigs)

    p = sub.add_parser("sweep", help="evaluate a grid of coarsenings from a config file")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))
    except (GraphError, CoarseningError, ValueError, OSError) as exc:
        print(f"graphcoarsen: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
