"""Topological experience map: pose-stamped captioned nodes joined by
traversability edges, plus a node-level shortest-path planner and the
line-delimited JSON file format used to persist maps.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    DuplicateId,
    InvalidPose,
    NegativeCost,
    ParseError,
    SelfLoop,
    UnknownNode,
    Unreachable,
)

MAP_FORMAT = "erag-map"
MAP_VERSION = 1
_SIG_DIGITS = 9


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    wrapped = (yaw + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "yaw"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError) as exc:
                raise InvalidPose(f"{name} is not a number: {value!r}") from exc
            if not math.isfinite(value):
                raise InvalidPose(f"{name} is not finite: {value!r}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def xyz(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def distance(self, other: Pose) -> float:
        return math.dist(self.xyz(), other.xyz())


def _check_id(node_id: object) -> str:
    if not isinstance(node_id, str) or not node_id or any(c.isspace() for c in node_id):
        raise ValueError(f"node id must be a nonempty string without whitespace: {node_id!r}")
    return node_id


@dataclass(frozen=True)
class MapNode:
    id: str
    pose: Pose
    caption: str
    image_ref: str | None = None

    def __post_init__(self) -> None:
        _check_id(self.id)
        if not isinstance(self.caption, str) or not self.caption.strip():
            raise ValueError(f"node {self.id}: caption must be nonempty")


@dataclass(frozen=True)
class TopoEdge:
    a: str
    b: str
    cost: float

    def other(self, node_id: str) -> str:
        return self.b if node_id == self.a else self.a


def _edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class TopologicalMap:
    """Undirected graph of :class:`MapNode` objects.

    Mutated only while it is being built; afterwards treat it as read-only,
    which makes it safe to share between threads.
    """

    def __init__(self, nodes: Iterable[MapNode] = (), edges: Iterable[TopoEdge] = ()) -> None:
        self._nodes: dict[str, MapNode] = {}
        self._edges: dict[tuple[str, str], TopoEdge] = {}
        self._adj: dict[str, dict[str, float]] = {}
        for node in nodes:
            self.add_node(node)
        for edge in edges:
            self.add_edge(edge.a, edge.b, edge.cost)

    # -- construction -----------------------------------------------------

    def add_node(self, node: MapNode) -> TopologicalMap:
        if not isinstance(node.pose, Pose):
            raise InvalidPose(f"node {node.id}: pose must be a Pose")
        if node.id in self._nodes:
            raise DuplicateId(f"duplicate node id {node.id!r}")
        self._nodes[node.id] = node
        self._adj[node.id] = {}
        return self

    def add_edge(self, a: str, b: str, cost: float | None = None) -> TopologicalMap:
        for end in (a, b):
            if end not in self._nodes:
                raise UnknownNode(f"edge endpoint {end!r} is not in the map")
        if a == b:
            raise SelfLoop(f"self loop on {a!r}")
        if cost is None:
            cost = self._nodes[a].pose.distance(self._nodes[b].pose)
        cost = float(cost)
        if not math.isfinite(cost):
            raise NegativeCost(f"edge {a}-{b}: cost must be finite, got {cost!r}")
        if cost < 0:
            raise NegativeCost(f"edge {a}-{b}: negative cost {cost}")
        key = _edge_key(a, b)
        # re-adding an edge replaces it, so each pair is stored once
        self._edges[key] = TopoEdge(key[0], key[1], cost)
        self._adj[a][b] = cost
        self._adj[b][a] = cost
        return self

    # -- queries ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def __iter__(self) -> Iterator[MapNode]:
        return iter(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TopologicalMap):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __repr__(self) -> str:
        return f"TopologicalMap(nodes={len(self._nodes)}, edges={len(self._edges)})"

    @property
    def nodes(self) -> list[MapNode]:
        """Nodes in canonical (id-sorted) order."""
        return [self._nodes[k] for k in sorted(self._nodes)]

    @property
    def edges(self) -> list[TopoEdge]:
        return [self._edges[k] for k in sorted(self._edges)]

    def node(self, node_id: str) -> MapNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown map node {node_id!r}") from None

    def neighbors(self, node_id: str) -> dict[str, float]:
        self.node(node_id)
        return dict(self._adj[node_id])

    def has_edge(self, a: str, b: str) -> bool:
        return _edge_key(a, b) in self._edges

    def edge_cost(self, a: str, b: str) -> float:
        try:
            return self._edges[_edge_key(a, b)].cost
        except KeyError:
            raise UnknownNode(f"no edge between {a!r} and {b!r}") from None

    def path_cost(self, path: list[str]) -> float:
        total = 0.0
        for u, v in zip(path, path[1:]):
            total += self.edge_cost(u, v)
        return total

    def is_valid_path(self, path: list[str]) -> bool:
        if not path or any(p not in self._nodes for p in path):
            return False
        return all(self.has_edge(u, v) for u, v in zip(path, path[1:]))

    def shortest_path(self, source: str, target: str) -> list[str]:
        """Minimum-cost node path from ``source`` to ``target``.

        Among equal-cost paths the lexicographically smallest id sequence
        wins: the heap orders entries by (cost, path), and a path prefix
        always sorts before its extensions, so the first settled entry for
        every node is already its lexicographic minimum.
        """
        self.node(source)
        self.node(target)
        heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (source,))]
        settled: set[str] = set()
        while heap:
            cost, path = heapq.heappop(heap)
            node = path[-1]
            if node in settled:
                continue
            if node == target:
                return list(path)
            settled.add(node)
            for nbr, w in self._adj[node].items():
                if nbr not in settled:
                    heapq.heappush(heap, (cost + w, path + (nbr,)))
        raise Unreachable(f"no path from {source!r} to {target!r}")

    def connected_components(self) -> list[set[str]]:
        seen: set[str] = set()
        comps = []
        for start in sorted(self._nodes):
            if start in seen:
                continue
            comp = {start}
            stack = [start]
            while stack:
                for nbr in self._adj[stack.pop()]:
                    if nbr not in comp:
                        comp.add(nbr)
                        stack.append(nbr)
            seen |= comp
            comps.append(comp)
        return comps


# -- persistence --------------------------------------------------------------


def canonical_float(value: float) -> float:
    """``value`` as the map file stores it (9 significant digits)."""
    # shortest repr of a 9-significant-digit float has at most 9 digits
    rounded = float(f"{value:.{_SIG_DIGITS}g}")
    return 0.0 if rounded == 0 else rounded


def _dump(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def save_map(tmap: TopologicalMap) -> bytes:
    """Serialize to the canonical line-delimited form (nodes, then edges, id-sorted)."""
    lines = [_dump({"format": MAP_FORMAT, "version": MAP_VERSION})]
    for node in tmap.nodes:
        rec = {
            "type": "node",
            "id": node.id,
            "x": canonical_float(node.pose.x),
            "y": canonical_float(node.pose.y),
            "z": canonical_float(node.pose.z),
            "yaw": canonical_float(node.pose.yaw),
        }
        if node.image_ref is not None:
            rec["image_ref"] = node.image_ref
        rec["caption"] = node.caption
        lines.append(_dump(rec))
    for edge in tmap.edges:
        lines.append(_dump({"type": "edge", "a": edge.a, "b": edge.b, "cost": canonical_float(edge.cost)}))
    return ("\n".join(lines) + "\n").encode("utf-8")


def map_digest(tmap: TopologicalMap) -> str:
    return hashlib.sha256(save_map(tmap)).hexdigest()


def iter_records(data: bytes | str, expected_format: str, expected_version: int):
    """Yield ``(line_number, record)`` for every record after a checked header."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, reason="Syntax") from None
        if not isinstance(rec, dict):
            raise ParseError("record is not an object", line=lineno, reason="Syntax")
        if not header_seen:
            if rec.get("format") != expected_format:
                raise ParseError(f"expected format {expected_format!r}, got {rec.get('format')!r}",
                                 line=lineno, field="format", reason="Header")
            if rec.get("version") != expected_version:
                raise ParseError(f"unsupported version {rec.get('version')!r}",
                                 line=lineno, field="version", reason="Header")
            header_seen = True
            yield lineno, rec
            continue
        yield lineno, rec
    if not header_seen:
        raise ParseError("missing header record", line=1, reason="Header")


def _field(rec: dict, name: str, lineno: int, kind: type | tuple = str, required: bool = True):
    if name not in rec:
        if required:
            raise ParseError("missing field", line=lineno, field=name, reason="MissingField")
        return None
    value = rec[name]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"expected a number, got {value!r}", line=lineno, field=name,
                             reason="FieldType")
        return float(value)
    if not isinstance(value, kind):
        raise ParseError(f"expected {getattr(kind, '__name__', kind)}, got {value!r}",
                         line=lineno, field=name, reason="FieldType")
    return value


def load_map(data: bytes | str) -> TopologicalMap:
    """Parse the line-delimited map format; errors carry line/field context."""
    tmap = TopologicalMap()
    pending_edges = []
    records = iter_records(data, MAP_FORMAT, MAP_VERSION)
    next(records)  # header
    for lineno, rec in records:
        kind = rec.get("type")
        if kind == "node":
            node_id = _field(rec, "id", lineno)
            coords = {k: _field(rec, k, lineno, float) for k in ("x", "y", "z", "yaw")}
            try:
                node = MapNode(
                    id=node_id,
                    pose=Pose(**coords),
                    caption=_field(rec, "caption", lineno),
                    image_ref=_field(rec, "image_ref", lineno, required=False),
                )
                tmap.add_node(node)
            except DuplicateId as exc:
                raise ParseError(str(exc), line=lineno, field="id", reason="DuplicateId") from exc
            except InvalidPose as exc:
                raise ParseError(str(exc), line=lineno, reason="InvalidPose") from exc
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, reason="InvalidNode") from exc
        elif kind == "edge":
            a = _field(rec, "a", lineno)
            b = _field(rec, "b", lineno)
            cost = _field(rec, "cost", lineno, float, required=False)
            pending_edges.append((lineno, a, b, cost))
        else:
            raise ParseError(f"unknown record type {kind!r}", line=lineno, field="type",
                             reason="RecordType")
    for lineno, a, b, cost in pending_edges:
        if a in tmap and b in tmap and a != b and tmap.has_edge(a, b):
            raise ParseError(f"duplicate edge {a}-{b}", line=lineno, reason="DuplicateEdge")
        try:
            tmap.add_edge(a, b, cost)
        except UnknownNode as exc:
            raise ParseError(str(exc), line=lineno, reason="UnknownNode") from exc
        except SelfLoop as exc:
            raise ParseError(str(exc), line=lineno, reason="SelfLoop") from exc
        except NegativeCost as exc:
            raise ParseError(str(exc), line=lineno, field="cost", reason="NegativeCost") from exc
    return tmap


def read_map(path: str | Path) -> TopologicalMap:
    return load_map(Path(path).read_bytes())


def write_map(tmap: TopologicalMap, path: str | Path) -> None:
    Path(path).write_bytes(save_map(tmap))
