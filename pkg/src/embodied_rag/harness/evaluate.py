"""Score retrieval methods against gold queries.

Explicit and implicit queries succeed when the returned map node is one of
the query's gold leaves. Global queries are scored by term coverage: the
fraction of gold terms the answer mentions (case-insensitive, whole words).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..forest import SemanticForest
from ..generation import AgentState, AnswerResult, NavigationResult, Stopwatch, result_record, run_query
from ..llm.gateway import Gateway
from ..retrieval import DEFAULT_K, METHODS, QUERY_KINDS, Method
from ..topo_map import TopologicalMap
from .world import GoldQuery

logger = logging.getLogger(__name__)

NAV_KINDS = ("explicit", "implicit")


def term_coverage(answer: str, terms: tuple[str, ...] | list[str]) -> float:
    """Fraction of ``terms`` mentioned in ``answer`` as whole words, ignoring case."""
    terms = list(dict.fromkeys(terms))
    if not terms:
        raise ValueError("coverage needs at least one term")
    hits = sum(1 for t in terms if re.search(rf"(?<!\w){re.escape(t)}(?!\w)", answer, re.IGNORECASE))
    return hits / len(terms)


@dataclass
class EvalReport:
    k: int
    methods: list[str]
    # method -> kind -> [successes, attempts] for navigation kinds
    counts: dict[str, dict[str, list[int]]]
    # method -> mean term coverage over global queries (absent if none)
    coverage: dict[str, float]
    records: list[dict]
    timing: dict[str, dict[str, float]] = field(default_factory=dict)

    def sr(self, method: str, kind: str) -> float | None:
        successes, attempts = self.counts[method][kind]
        return successes / attempts if attempts else None

    def summary(self) -> dict:
        return {
            m: {**{kind: self.sr(m, kind) for kind in NAV_KINDS},
                "global_coverage": self.coverage.get(m)}
            for m in self.methods
        }

    def canonical(self) -> dict:
        """Everything except wall-clock timing; equal for equal seeds."""
        records = [{k: v for k, v in r.items() if k != "timing_ms"} for r in self.records]
        return {"k": self.k, "methods": list(self.methods), "summary": self.summary(),
                "counts": self.counts, "records": records}

    def to_dict(self) -> dict:
        return {**self.canonical(), "records": self.records, "timing": self.timing}

    def to_json(self, *, canonical: bool = False) -> str:
        data = self.canonical() if canonical else self.to_dict()
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def table(self) -> str:
        """Human-readable table, one column per method."""
        rows = [("", *self.methods)]
        for kind in NAV_KINDS:
            cells = []
            for m in self.methods:
                s, n = self.counts[m][kind]
                cells.append(f"{s / n:.3f} ({s}/{n})" if n else "-")
            rows.append((f"{kind} SR", *cells))
        rows.append(("global coverage", *(f"{self.coverage[m]:.3f}" if m in self.coverage else "-"
                                          for m in self.methods)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        return f"k={self.k}\n" + "\n".join(lines)


def _score(gq: GoldQuery, result: NavigationResult | AnswerResult | None) -> dict:
    if gq.query.kind == "global":
        answer = result.answer if isinstance(result, AnswerResult) else ""
        return {"coverage": term_coverage(answer, gq.gold_terms) if answer else 0.0}
    ok = isinstance(result, NavigationResult) and result.map_node in gq.gold_leaves
    return {"success": ok}


def _run_one(gq: GoldQuery, method: Method, k: int, state: AgentState, tmap: TopologicalMap,
             forest: SemanticForest, gateway: Gateway, concurrency: int) -> dict:
    result, error = None, None
    with Stopwatch() as sw:
        try:
            result = run_query(gq.query, k, state, tmap, forest, method, gateway, concurrency=concurrency)
        except Exception as exc:  # noqa: BLE001 - a failing query is scored, not fatal
            logger.warning("query %s (%s) failed: %s: %s", gq.id, method, type(exc).__name__, exc)
            error = exc
    rec = result_record(gq.query, method, k, result, error=error, elapsed=sw.elapsed, query_id=gq.id)
    rec.update(_score(gq, result))
    return rec


def evaluate(tmap: TopologicalMap, forest: SemanticForest, queries: list[GoldQuery],
             methods: list[str] | tuple[str, ...] = METHODS, k: int = DEFAULT_K, gateway: Gateway | None = None,
             *, state: AgentState | None = None, concurrency: int = 8) -> EvalReport:
    """Run every query with every method and aggregate success rates.

    Queries run concurrently; the report is assembled from records sorted by
    (method, query id), so it does not depend on completion order.
    """
    if not queries:
        raise ValueError("no queries to evaluate")
    if k < 1:
        raise ValueError("k must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    forest.validate(tmap)
    gateway = gateway or Gateway()
    state = state or AgentState.initial(tmap)
    jobs = [(gq, m) for m in methods for gq in queries]
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        records = list(pool.map(
            lambda job: _run_one(job[0], job[1], k, state, tmap, forest, gateway, concurrency), jobs))
    order = {m: i for i, m in enumerate(methods)}
    records.sort(key=lambda r: (order[r["method"]], r["id"]))

    counts = {m: {kind: [0, 0] for kind in NAV_KINDS} for m in methods}
    cov: dict[str, list[float]] = {m: [] for m in methods}
    times: dict[str, list[float]] = {m: [] for m in methods}
    for r in records:
        times[r["method"]].append(r["timing_ms"])
        if r["kind"] == "global":
            cov[r["method"]].append(r["coverage"])
        else:
            counts[r["method"]][r["kind"]][0] += int(r["success"])
            counts[r["method"]][r["kind"]][1] += 1
    coverage = {m: sum(v) / len(v) for m, v in cov.items() if v}
    timing = {m: {"mean_ms": statistics.fmean(v), "median_ms": statistics.median(v), "max_ms": max(v)}
              for m, v in times.items() if v}
    return EvalReport(k, list(methods), counts, coverage, records, timing)


@dataclass
class KSweep:
    k_values: list[int]
    reports: list[EvalReport]

    def rows(self) -> list[dict]:
        """One row per (k, method): the plotting series."""
        out = []
        for k, rep in zip(self.k_values, self.reports):
            for m in rep.methods:
                row: dict = {"k": k, "method": m}
                for kind in NAV_KINDS:
                    row[f"{kind}_sr"] = rep.sr(m, kind)
                row["global_coverage"] = rep.coverage.get(m)
                out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["k", "method", *(f"{kind}_sr" for kind in NAV_KINDS), "global_coverage"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({key: "" if v is None else v for key, v in row.items()})
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def ablate_k(tmap: TopologicalMap, forest: SemanticForest, queries: list[GoldQuery],
             methods: list[str] | tuple[str, ...], k_values: list[int], gateway: Gateway | None = None,
             *, state: AgentState | None = None, concurrency: int = 8) -> KSweep:
    """One :func:`evaluate` per k over the same world and gateway."""
    if not k_values:
        raise ValueError("k_values must be nonempty")
    gateway = gateway or Gateway()
    reports = [evaluate(tmap, forest, queries, methods, k, gateway, state=state, concurrency=concurrency)
               for k in k_values]
    return KSweep(list(k_values), reports)


__all__ = ["EvalReport", "KSweep", "QUERY_KINDS", "ablate_k", "evaluate", "term_coverage"]
