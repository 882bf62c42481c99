"""Command-line entry point: build memory, run queries, evaluate, inspect.

Standard output carries only JSON records; diagnostics go to standard error.
Exit status is 0 on success, 1 when a method fails (for example an
unreachable waypoint) and 2 for usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import (
    DigestMismatch,
    EmbodiedRagError,
    InvalidSpec,
    ParseError,
    UnknownNode,
)
from .forest import ClusteringConfig, SemanticForest, build_forest, read_forest, write_forest
from .generation import AgentState, Stopwatch, generate_navigation, generate_text_answer, result_record
from .harness.dataset import ingest_dataset
from .harness.evaluate import ablate_k, evaluate
from .harness.world import WorldSpec, generate_world
from .llm.gateway import ROLES, Gateway
from .retrieval import DEFAULT_K, METHODS, QUERY_KINDS, Query, render_chain, retrieve
from .topo_map import TopologicalMap, read_map

logger = logging.getLogger("embodied_rag")

METHOD_ALIASES = {"semantic": "semantic_match", "rag": "rag", "embodied": "embodied_rag"}
METHOD_ALIASES.update({m: m for m in METHODS})


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    map: str | None = None
    forest: str | None = None
    method: str = "embodied_rag"
    kind: str = "explicit"
    k: int = DEFAULT_K
    backend: str = "mock"
    # per-role overrides of ``backend``
    backends: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    concurrency: int = 8
    clustering: dict = field(default_factory=dict)
    cache: str | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.concurrency < 1:
            raise UsageError("concurrency must be >= 1")
        if self.method not in METHOD_ALIASES:
            raise UsageError(f"unknown method {self.method!r}")
        self.method = METHOD_ALIASES[self.method]
        if self.kind not in QUERY_KINDS:
            raise UsageError(f"unknown query kind {self.kind!r}")
        for role, name in {"*": self.backend, **self.backends}.items():
            if name not in ("mock", "remote"):
                raise UsageError(f"unknown backend {name!r} for {role}")

    def backend_selection(self) -> dict[str, str]:
        return {role: self.backends.get(role, self.backend) for role in ROLES}

    def gateway(self, cache_path: str | Path | None = None) -> Gateway:
        path = self.cache if self.cache is not None else cache_path
        return Gateway.from_selection(self.backend_selection(), cache_path=path, seed=self.seed,
                                      max_in_flight=self.concurrency)


def load_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values: dict = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = set(values) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in ("map", "forest", "method", "kind", "k", "backend", "seed", "concurrency", "cache"):
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _clustering(cfg: RunConfig, tmap: TopologicalMap) -> ClusteringConfig:
    opts = dict(cfg.clustering)
    schedule = opts.pop("threshold_schedule", None)
    try:
        if schedule is not None:
            return ClusteringConfig(threshold_schedule=tuple(schedule), **opts)
        return ClusteringConfig.for_map(tmap, **opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"clustering config: {exc}") from None


def _require(value: str | None, flag: str) -> str:
    if not value:
        raise UsageError(f"{flag} is required")
    return value


def _load_map(cfg: RunConfig) -> TopologicalMap:
    path = Path(_require(cfg.map, "--map"))
    if not path.exists():
        raise FileNotFoundError(f"map not found: {path}")
    return read_map(path)


def _load_pair(cfg: RunConfig) -> tuple[TopologicalMap, SemanticForest]:
    tmap = _load_map(cfg)
    forest_path = Path(_require(cfg.forest, "--forest"))
    if not forest_path.exists():
        raise FileNotFoundError(f"forest not found: {forest_path}")
    return tmap, read_forest(forest_path, tmap)


def _cache_beside(forest_path: str) -> Path:
    return Path(forest_path).with_suffix(".cache.jsonl")


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, ensure_ascii=False, sort_keys=False) + "\n")
    sys.stdout.flush()


# -- commands --------------------------------------------------------------------------


def cmd_build(args: argparse.Namespace, cfg: RunConfig) -> int:
    tmap = _load_map(cfg)
    out = _require(cfg.forest, "--forest")
    ccfg = _clustering(cfg, tmap)
    gateway = cfg.gateway(_cache_beside(out))
    with Stopwatch() as sw:
        forest = build_forest(tmap, gateway, ccfg, concurrency=cfg.concurrency)
    write_forest(forest, out)
    _emit({
        "type": "build",
        "forest": str(out),
        "map_digest": forest.map_digest,
        "nodes": len(forest.nodes),
        "level_counts": {str(level): n for level, n in sorted(forest.level_counts().items())},
        "roots": len(forest.roots),
        "depth": forest.depth,
        "summarizer_requests": gateway.requests["summarizer"],
        "summarizer_calls": gateway.provider_calls["summarizer"],
        "clustering": ccfg.to_dict(),
        "timing_ms": round(sw.elapsed * 1000.0, 3),
    })
    return 0


def _write_trace(path: str | None, record: dict, exc: BaseException | None = None) -> None:
    if not path:
        return
    trace = record.get("trace")
    if trace is None and exc is not None:
        trace = getattr(exc, "trace", None)
    Path(path).write_text(json.dumps({"query": record["query"], "method": record["method"],
                                      "trace": trace or []}, indent=2) + "\n", encoding="utf-8")


def _run_query_command(args: argparse.Namespace, cfg: RunConfig, mode: str) -> int:
    if mode == "navigate" and cfg.kind == "global":
        raise UsageError("global queries yield answers, not waypoints; use the answer command")
    tmap, forest = _load_pair(cfg)
    query = Query(args.query, cfg.kind)
    gateway = cfg.gateway(_cache_beside(cfg.forest))
    state = AgentState.initial(tmap, args.start) if mode == "navigate" else None
    result = None
    retrieved = None
    try:
        with Stopwatch() as sw:
            retrieved = retrieve(forest, query, gateway, cfg.method, cfg.k, concurrency=cfg.concurrency)
            if mode == "navigate":
                result = generate_navigation(query, retrieved.context_chains(forest), state, tmap, forest, gateway)
            elif mode == "answer":
                result = generate_text_answer(query, retrieved.context_chains(forest), gateway)
    except EmbodiedRagError as exc:
        rec = result_record(query, cfg.method, cfg.k, None, error=exc)
        if retrieved is not None:
            rec["retrieval"] = retrieved.to_record()
        _write_trace(args.trace, rec, exc)
        _emit(rec)
        raise
    if result is None:
        rec = {"query": query.text, "kind": query.kind, "method": cfg.method, "k": cfg.k,
               "result": {"type": "retrieval", **retrieved.to_record()},
               "chains": [c.rendering for c in retrieved.context_chains(forest)]}
        if args.trace:
            rec["trace"] = retrieved.trace_record()
        rec["timing_ms"] = round(sw.elapsed * 1000.0, 3)
    else:
        result.retrieval = retrieved
        rec = result_record(query, cfg.method, cfg.k, result, elapsed=sw.elapsed, trace=bool(args.trace))
    _write_trace(args.trace, rec)
    _emit(rec)
    return 0


def cmd_retrieve(args: argparse.Namespace, cfg: RunConfig) -> int:
    return _run_query_command(args, cfg, "retrieve")


def cmd_navigate(args: argparse.Namespace, cfg: RunConfig) -> int:
    return _run_query_command(args, cfg, "navigate")


def cmd_answer(args: argparse.Namespace, cfg: RunConfig) -> int:
    return _run_query_command(args, cfg, "answer")


def _parse_methods(text: str) -> list[str]:
    out = []
    for name in text.split(","):
        name = name.strip()
        if name not in METHOD_ALIASES:
            raise UsageError(f"unknown method {name!r}")
        out.append(METHOD_ALIASES[name])
    return out


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --k-sweep value {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise UsageError("--k-sweep needs positive integers")
    return ks


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.dataset:
        tmap, queries = ingest_dataset(args.dataset)
        queries = queries or []
    else:
        if args.world:
            try:
                spec = WorldSpec.from_file(args.world)
            except FileNotFoundError:
                raise UsageError(f"world spec not found: {args.world}") from None
        else:
            spec = WorldSpec(seed=cfg.seed, node_count=args.nodes)
        tmap, queries = generate_world(spec)
    if args.kinds:
        wanted = set(args.kinds.split(","))
        queries = [q for q in queries if q.query.kind in wanted]
    if not queries:
        raise UsageError("the query set is empty")
    methods = _parse_methods(args.methods)
    gateway = cfg.gateway()
    forest = build_forest(tmap, gateway, _clustering(cfg, tmap), concurrency=cfg.concurrency)
    if args.k_sweep:
        sweep = ablate_k(tmap, forest, queries, methods, _parse_ks(args.k_sweep), gateway,
                         concurrency=cfg.concurrency)
        for k, report in zip(sweep.k_values, sweep.reports):
            for rec in report.records:
                _emit({"type": "query", **rec})
            print(report.table(), file=sys.stderr)
        for row in sweep.rows():
            _emit({"type": "series", **row})
        if args.export:
            sweep.write_csv(args.export)
        return 0
    report = evaluate(tmap, forest, queries, methods, cfg.k, gateway, concurrency=cfg.concurrency)
    for rec in report.records:
        _emit({"type": "query", **rec})
    _emit({"type": "summary", "k": report.k, "summary": report.summary(), "timing": report.timing})
    print(report.table(), file=sys.stderr)
    if args.export:
        Path(args.export).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_inspect(args: argparse.Namespace, cfg: RunConfig) -> int:
    forest_path = Path(_require(cfg.forest, "--forest"))
    if not forest_path.exists():
        raise FileNotFoundError(f"forest not found: {forest_path}")
    tmap = _load_map(cfg) if cfg.map else None
    forest = read_forest(forest_path, tmap)
    node = forest.resolve(args.node)
    if node.is_leaf:
        sys.stdout.write(render_chain(forest, node.id).rendering + "\n")
        return 0
    for depth, n in forest.walk(node.id):
        c = n.centroid
        summary = " ".join((n.summary or "").split())
        sys.stdout.write(f"{'  ' * depth}L{n.level} {n.id} ({c.x:.2f}, {c.y:.2f}, {c.z:.2f}): {summary}\n")
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--map", help="topological map file (JSONL)")
    common.add_argument("--forest", help="semantic forest file (JSONL)")
    common.add_argument("--method", choices=sorted(METHOD_ALIASES), default=None)
    common.add_argument("--k", type=int, default=None, help=f"retrieval count (default {DEFAULT_K})")
    common.add_argument("--kind", choices=QUERY_KINDS, default=None)
    common.add_argument("--backend", choices=("mock", "remote"), default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--concurrency", type=int, default=None)
    common.add_argument("--cache", default=None, help="response cache file")
    common.add_argument("--trace", default=None, help="write descent traces to this file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="erag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="cluster and summarize a map into a forest")
    p.set_defaults(func=cmd_build)

    for name, func, text in (("retrieve", cmd_retrieve, "retrieve leaves or chains for a query"),
                             ("navigate", cmd_navigate, "pick a waypoint and plan a path"),
                             ("answer", cmd_answer, "answer a query in text")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("query")
        if name == "navigate":
            p.add_argument("--start", default=None, help="current map node (default: first id)")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="score methods on a world or dataset")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--world", help="WorldSpec JSON file")
    src.add_argument("--dataset", help="dataset directory (map.jsonl + queries.jsonl), or \"bundled\"")
    p.add_argument("--nodes", type=int, default=50, help="node count of the default world")
    p.add_argument("--methods", default="semantic,rag,embodied")
    p.add_argument("--kinds", default=None, help="comma-separated query kinds to keep")
    p.add_argument("--k-sweep", default=None, help="comma-separated k values, e.g. 1,2,5,10")
    p.add_argument("--export", default=None, help="write the k-sweep CSV (or the full report JSON)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", parents=[common], help="dump a subtree or a leaf's chain")
    p.add_argument("node", help="forest id or map node id")
    p.set_defaults(func=cmd_inspect)
    return parser


USAGE_ERRORS = (UsageError, FileNotFoundError, ParseError, DigestMismatch, UnknownNode, InvalidSpec, ValueError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        return args.func(args, cfg)
    except USAGE_ERRORS as exc:
        print(f"erag {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except EmbodiedRagError as exc:
        print(f"erag {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
