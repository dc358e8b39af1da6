"""Reading and writing graphs and coarsening results.

Two graph formats are supported:

* ``edgelist``: whitespace separated ``u v [w]`` per line, ``#`` starts a
  comment, ids are 0-based.  A missing weight means 1.0.  An optional
  ``# n: <count>`` header fixes the vertex count (otherwise max id + 1).
* ``json``: ``{"n": ..., "edges": [[u, v, w], ...], "vertex_weights": [...]}``.

JSON floats are written with ``repr`` so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import CoarseningResult, GraphError, Partition, WeightedGraph


class GraphFormatError(GraphError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        if fmt not in ("edgelist", "json"):
            raise ValueError(f"unknown graph format {fmt!r}")
        return fmt
    return "json" if path.suffix.lower() == ".json" else "edgelist"


def parse_edgelist(text: str) -> WeightedGraph:
    n_header = None
    rows = []
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line, _, comment = raw.partition("#")
        if not line.strip():
            head = comment.strip()
            if head.lower().startswith("n:"):
                try:
                    n_header = int(head[2:].strip())
                except ValueError:
                    raise GraphFormatError(f"bad vertex count header {head!r}", lineno) from None
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"expected 'u v [w]', got {line.strip()!r}", lineno)
        try:
            a, b = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise GraphFormatError(f"cannot parse {line.strip()!r}", lineno) from None
        if a < 0 or b < 0:
            raise GraphFormatError("negative vertex id", lineno)
        if a == b:
            raise GraphFormatError(f"self-loop at vertex {a}", lineno)
        if not np.isfinite(w) or w <= 0:
            raise GraphFormatError(f"non-positive weight {w!r}", lineno)
        key = (min(a, b), max(a, b))
        if key in seen:
            raise GraphFormatError(f"duplicate edge {key} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        rows.append((a, b, w))
    n = max((max(a, b) for a, b, _ in rows), default=-1) + 1
    if n_header is not None:
        if n_header < n:
            raise GraphFormatError(f"header says n={n_header} but ids reach {n - 1}")
        n = n_header
    return WeightedGraph(n, rows)


def format_edgelist(g: WeightedGraph) -> str:
    lines = [f"# n: {g.n}"]
    lines += [f"{a} {b} {c:.17g}" for a, b, c in g.edges]
    return "\n".join(lines) + "\n"


def graph_to_dict(g: WeightedGraph) -> dict:
    d = {"n": g.n, "edges": [[a, b, c] for a, b, c in g.edges]}
    if g.vertex_weights is not None:
        d["vertex_weights"] = [float(x) for x in g.vertex_weights]
    return d


def graph_from_dict(d: dict) -> WeightedGraph:
    try:
        n = int(d["n"])
        edges = d.get("edges", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"malformed graph bundle: {exc}") from None
    for i, e in enumerate(edges):
        if len(e) not in (2, 3):
            raise GraphFormatError(f"edge #{i} must be [u, v, w]")
    rows = [(e[0], e[1], e[2] if len(e) == 3 else 1.0) for e in edges]
    return WeightedGraph(n, rows, d.get("vertex_weights"))


def load_graph(path, fmt: str | None = None) -> WeightedGraph:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    text = path.read_text()
    if fmt == "edgelist":
        return parse_edgelist(text)
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(exc.msg, exc.lineno) from None
    return graph_from_dict(d)


def save_graph(g: WeightedGraph, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "edgelist":
        path.write_text(format_edgelist(g))
    else:
        path.write_text(json.dumps(graph_to_dict(g)) + "\n")


def result_to_dict(res: CoarseningResult, include_original: bool = False) -> dict:
    d = {
        "algorithm": res.algorithm,
        "ratio": res.ratio,
        "n": res.original.n,
        "n_coarse": res.n_coarse,
        "assign": res.partition.assign.tolist(),
        "cluster_sizes": res.partition.cluster_sizes.tolist(),
        "coarse": graph_to_dict(res.coarse),
        "metadata": res.metadata,
    }
    if include_original:
        d["original"] = graph_to_dict(res.original)
    return d


def save_result(res: CoarseningResult, path, include_original: bool = True) -> None:
    Path(path).write_text(json.dumps(result_to_dict(res, include_original), sort_keys=True) + "\n")


def load_result(path, original: WeightedGraph | None = None) -> CoarseningResult:
    d = json.loads(Path(path).read_text())
    if original is None:
        if "original" not in d:
            raise GraphFormatError("result file has no original graph; pass it explicitly")
        original = graph_from_dict(d["original"])
    part = Partition(d["assign"], d["n_coarse"])
    return CoarseningResult(
        original=original,
        coarse=graph_from_dict(d["coarse"]),
        partition=part,
        algorithm=d["algorithm"],
        ratio=float(d["ratio"]),
        metadata=d.get("metadata", {}),
    )
