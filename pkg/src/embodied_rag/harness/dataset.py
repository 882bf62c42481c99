"""Directory datasets: ``map.jsonl`` plus an optional ``queries.jsonl`` sidecar.

Sidecar layout (one JSON object per line)::

    {"format": "erag-queries", "version": 1}
    {"id": "e000", "text": "find the crimson kettle", "kind": "explicit",
     "gold_leaves": ["n0007"], "gold_terms": []}

Gold leaves are map node ids. Any robot stack that can write the map format
can be replayed through :func:`ingest_dataset`.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from ..errors import InvalidSpec, ParseError
from ..retrieval import Query
from ..topo_map import TopologicalMap, iter_records, load_map, save_map
from .world import GoldQuery

QUERIES_FORMAT = "erag-queries"
QUERIES_VERSION = 1
MAP_FILE = "map.jsonl"
QUERIES_FILE = "queries.jsonl"


def save_queries(queries: list[GoldQuery]) -> bytes:
    lines = [json.dumps({"format": QUERIES_FORMAT, "version": QUERIES_VERSION})]
    for q in queries:
        lines.append(json.dumps({
            "id": q.id, "text": q.query.text, "kind": q.query.kind,
            "gold_leaves": sorted(q.gold_leaves), "gold_terms": list(q.gold_terms),
        }, ensure_ascii=False))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_queries(data: bytes | str, tmap: TopologicalMap) -> list[GoldQuery]:
    """Parse a sidecar; gold leaves must name nodes of ``tmap``."""
    records = iter_records(data, QUERIES_FORMAT, QUERIES_VERSION)
    next(records)
    out: list[GoldQuery] = []
    seen: set[str] = set()
    for lineno, rec in records:
        try:
            qid = rec["id"]
            gold = rec.get("gold_leaves", [])
            for node_id in gold:
                if node_id not in tmap:
                    raise ParseError(f"gold leaf {node_id!r} is not a map node", line=lineno,
                                     field="gold_leaves", reason="UnknownNode")
            gq = GoldQuery(qid, Query(rec["text"], rec.get("kind", "explicit")), frozenset(gold),
                           tuple(rec.get("gold_terms", [])))
        except KeyError as exc:
            raise ParseError("missing field", line=lineno, field=str(exc.args[0]),
                             reason="MissingField") from None
        except (InvalidSpec, TypeError, ValueError) as exc:
            raise ParseError(str(exc), line=lineno, reason="FieldType") from None
        if qid in seen:
            raise ParseError(f"duplicate query id {qid!r}", line=lineno, field="id", reason="DuplicateId")
        seen.add(qid)
        out.append(gq)
    return out


def export_world(tmap: TopologicalMap, queries: list[GoldQuery] | None, directory: str | Path) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / MAP_FILE).write_bytes(save_map(tmap))
    if queries is not None:
        (out / QUERIES_FILE).write_bytes(save_queries(queries))
    return out


def bundled_dataset() -> Path:
    """Small two-region dataset shipped with the package (40 nodes, 18 queries)."""
    return Path(str(resources.files(__package__).joinpath("fixtures", "two_region")))


def ingest_dataset(path: str | Path) -> tuple[TopologicalMap, list[GoldQuery] | None]:
    """Load a dataset directory, a bare map file, or ``"bundled"``."""
    path = bundled_dataset() if str(path) == "bundled" else Path(path)
    map_path = path / MAP_FILE if path.is_dir() else path
    if not map_path.exists():
        raise FileNotFoundError(f"map not found: {map_path}")
    tmap = load_map(map_path.read_bytes())
    sidecar = map_path.parent / QUERIES_FILE
    if not sidecar.exists():
        return tmap, None
    return tmap, load_queries(sidecar.read_bytes(), tmap)
