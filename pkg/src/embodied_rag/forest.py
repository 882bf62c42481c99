"""Semantic forest: position-based agglomerative hierarchy over map nodes,
with mean-position centroids and bottom-up LLM summaries.

Forest node ids: leaves are ``leaf:<map node id>``; clusters created in cut
band ``b`` are ``c<b>.<i>`` numbered by their smallest member map-node id.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Literal, Protocol

import numpy as np

from .clustering import LINKAGES, agglomerate, default_schedule, pairwise_distances, split_oversized
from .errors import (
    DigestMismatch,
    EmptyMap,
    InvariantViolation,
    NotALeaf,
    ParseError,
    SummarizerError,
    UnknownNode,
)
from .llm.types import DEFAULT_SUMMARY_BUDGET, SummaryRequest
from .topo_map import Pose, TopologicalMap, iter_records, map_digest

FOREST_FORMAT = "erag-forest"
FOREST_VERSION = 1
LEAF_PREFIX = "leaf:"
CENTROID_TOL = 1e-9


def leaf_id_for(map_node_id: str) -> str:
    return LEAF_PREFIX + map_node_id


@dataclass(frozen=True)
class ForestNode:
    id: str
    level: int
    children: tuple[str, ...]
    parent: str | None
    map_node: str | None
    centroid: Pose
    summary: str | None
    band: int = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ClusteringConfig:
    linkage: Literal["average", "single", "complete"] = "average"
    metric_dims: Literal["xy", "xyz"] = "xy"
    threshold_schedule: tuple[float, ...] = (1.0,)
    max_children: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "threshold_schedule", tuple(float(t) for t in self.threshold_schedule))
        if self.linkage not in LINKAGES:
            raise ValueError(f"unknown linkage {self.linkage!r}")
        if self.metric_dims not in ("xy", "xyz"):
            raise ValueError(f"metric_dims must be 'xy' or 'xyz', got {self.metric_dims!r}")
        sched = self.threshold_schedule
        if not sched:
            raise ValueError("threshold_schedule must be nonempty")
        if any(not math.isfinite(t) or t < 0 for t in sched):
            raise ValueError("thresholds must be finite and nonnegative")
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("threshold_schedule must be strictly increasing")
        if self.max_children < 2:
            raise ValueError("max_children must be >= 2")

    @classmethod
    def for_map(cls, tmap: TopologicalMap, *, linkage: str = "average", metric_dims: str = "xy",
                max_children: int = 10, max_threshold: float | None = None) -> ClusteringConfig:
        """Config with the default geometric schedule fitted to ``tmap``."""
        pts = _points(tmap, metric_dims)
        return cls(linkage=linkage, metric_dims=metric_dims, max_children=max_children,
                   threshold_schedule=tuple(default_schedule(pts, max_threshold)))

    def to_dict(self) -> dict:
        return {"linkage": self.linkage, "metric_dims": self.metric_dims,
                "threshold_schedule": list(self.threshold_schedule),
                "max_children": self.max_children}


def _points(tmap: TopologicalMap, metric_dims: str) -> np.ndarray:
    nodes = tmap.nodes
    if metric_dims == "xy":
        return np.array([[n.pose.x, n.pose.y] for n in nodes], dtype=float).reshape(len(nodes), 2)
    return np.array([n.pose.xyz() for n in nodes], dtype=float).reshape(len(nodes), 3)


@dataclass
class SemanticForest:
    nodes: dict[str, ForestNode]
    map_digest: str | None = None
    roots: tuple[str, ...] = field(init=False)
    leaf_index: dict[str, str] = field(init=False)

    def __post_init__(self) -> None:
        self.roots = tuple(sorted(k for k, n in self.nodes.items() if n.parent is None))
        self.leaf_index = {n.map_node: k for k, n in sorted(self.nodes.items()) if n.map_node is not None}

    # -- lookups ----------------------------------------------------------

    def node(self, node_id: str) -> ForestNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown forest node {node_id!r}") from None

    def resolve(self, node_or_map_id: str) -> ForestNode:
        """Look up a forest id, falling back to a map-node id."""
        if node_or_map_id in self.nodes:
            return self.nodes[node_or_map_id]
        if node_or_map_id in self.leaf_index:
            return self.nodes[self.leaf_index[node_or_map_id]]
        raise UnknownNode(f"unknown forest or map node {node_or_map_id!r}")

    def leaves(self) -> list[str]:
        return sorted(k for k, n in self.nodes.items() if n.is_leaf)

    def leaves_under(self, node_id: str) -> list[str]:
        out = []
        stack = [node_id]
        while stack:
            node = self.node(stack.pop())
            if node.is_leaf:
                out.append(node.id)
            else:
                stack.extend(node.children)
        return sorted(out)

    def root_of(self, node_id: str) -> str:
        node = self.node(node_id)
        while node.parent is not None:
            node = self.nodes[node.parent]
        return node.id

    def chain(self, leaf_id: str) -> list[str]:
        """Ids from ``leaf_id`` up to its root, inclusive."""
        node = self.node(leaf_id)
        if not node.is_leaf:
            raise NotALeaf(f"{leaf_id!r} is not a leaf")
        out = [node.id]
        while node.parent is not None:
            node = self.nodes[node.parent]
            out.append(node.id)
        return out

    @property
    def depth(self) -> int:
        """Node count of the longest root-to-leaf path."""
        return max(self.nodes[r].level for r in self.roots) + 1

    def walk(self, node_id: str) -> Iterator[tuple[int, ForestNode]]:
        """Pre-order ``(depth, node)`` pairs of a subtree, children in id order."""
        stack = [(0, node_id)]
        while stack:
            d, nid = stack.pop()
            node = self.node(nid)
            yield d, node
            stack.extend((d + 1, c) for c in reversed(node.children))

    def level_counts(self) -> dict[int, int]:
        counts: dict[int, int] = defaultdict(int)
        for n in self.nodes.values():
            counts[n.level] += 1
        return dict(sorted(counts.items()))

    def band_partition(self, band: int) -> list[frozenset[str]]:
        """Map-node memberships of the clusters standing after cut ``band``."""
        frontier = [
            n.id for n in self.nodes.values()
            if n.band <= band and (n.parent is None or self.nodes[n.parent].band > band)
        ]
        return sorted(
            (frozenset(self.nodes[leaf].map_node for leaf in self.leaves_under(f)) for f in frontier),
            key=lambda s: min(s),
        )

    # -- invariants -------------------------------------------------------

    def validate(self, tmap: TopologicalMap | None = None) -> None:
        """Raise :class:`InvariantViolation` unless every structural law holds."""
        if not self.nodes:
            raise InvariantViolation("forest has no nodes")
        if not self.roots:
            raise InvariantViolation("forest has no roots")
        for node in self.nodes.values():
            leafish = (not node.children, node.map_node is not None)
            if leafish[0] != leafish[1]:
                raise InvariantViolation(f"{node.id}: leaf iff map_node present is violated")
            if node.is_leaf and node.level != 0:
                raise InvariantViolation(f"{node.id}: leaf at level {node.level}")
            for c in node.children:
                if c not in self.nodes:
                    raise InvariantViolation(f"{node.id}: child {c!r} missing")
                if self.nodes[c].parent != node.id:
                    raise InvariantViolation(f"{c}: parent link does not point back to {node.id}")
            if list(node.children) != sorted(set(node.children)):
                raise InvariantViolation(f"{node.id}: children must be unique and id-sorted")
            if node.parent is not None:
                if node.parent not in self.nodes or node.id not in self.nodes[node.parent].children:
                    raise InvariantViolation(f"{node.id}: dangling parent {node.parent!r}")
            if node.children:
                expected = 1 + max(self.nodes[c].level for c in node.children)
                if node.level != expected:
                    raise InvariantViolation(f"{node.id}: level {node.level}, expected {expected}")
        # acyclic + every node reachable from exactly one root
        seen: set[str] = set()
        for r in self.roots:
            for _, n in self.walk(r):
                if n.id in seen:
                    raise InvariantViolation(f"{n.id}: reached twice (cycle or shared child)")
                seen.add(n.id)
        if seen != set(self.nodes):
            raise InvariantViolation("some nodes are not reachable from any root")
        leaf_maps = [n.map_node for n in self.nodes.values() if n.is_leaf]
        if len(leaf_maps) != len(set(leaf_maps)):
            raise InvariantViolation("a map node appears in more than one leaf")
        for node in self.nodes.values():
            if node.is_leaf:
                continue
            leaves = [self.nodes[x].centroid for x in self.leaves_under(node.id)]
            for axis in ("x", "y", "z"):
                mean = math.fsum(getattr(p, axis) for p in leaves) / len(leaves)
                got = getattr(node.centroid, axis)
                if not math.isclose(got, mean, rel_tol=1e-12, abs_tol=CENTROID_TOL):
                    raise InvariantViolation(
                        f"{node.id}: centroid {axis}={got!r} differs from leaf mean {mean!r}")
        if tmap is not None:
            if set(leaf_maps) != {n.id for n in tmap.nodes}:
                raise InvariantViolation("forest leaves do not cover exactly the map nodes")
            if self.map_digest is not None and self.map_digest != map_digest(tmap):
                raise DigestMismatch("forest was built from a different map")


# -- construction ---------------------------------------------------------------


def build_structure(tmap: TopologicalMap, cfg: ClusteringConfig | None = None) -> SemanticForest:
    """Cluster map nodes band by band along ``cfg.threshold_schedule``.

    A cluster holding a single item is not materialized; the item simply
    stands at the next band. Non-leaf summaries are left unset.
    """
    if len(tmap) == 0:
        raise EmptyMap("cannot build a forest over an empty map")
    if cfg is None:
        cfg = ClusteringConfig.for_map(tmap)
    map_nodes = tmap.nodes
    pts = _points(tmap, cfg.metric_dims)
    xyz = np.array([n.pose.xyz() for n in map_nodes], dtype=float)
    point_dist = pairwise_distances(pts)

    nodes: dict[str, ForestNode] = {}
    # frontier entries: (forest id, leaf point indices, key = smallest map id)
    frontier: list[tuple[str, list[int], str]] = []
    for idx, mn in enumerate(map_nodes):
        fid = leaf_id_for(mn.id)
        nodes[fid] = ForestNode(id=fid, level=0, children=(), parent=None, map_node=mn.id,
                                centroid=mn.pose, summary=mn.caption, band=0)
        frontier.append((fid, [idx], mn.id))

    for band, threshold in enumerate(cfg.threshold_schedule, start=1):
        if len(frontier) == 1:
            break
        keys = [k for _, _, k in frontier]
        clusters = agglomerate(point_dist, [g for _, g, _ in frontier], keys, threshold, cfg.linkage)
        centroids = np.array([pts[g].mean(axis=0) for _, g, _ in frontier])
        groups: list[list[int]] = []
        for cluster in clusters:
            groups.extend(split_oversized(cluster, centroids, keys, cfg.max_children))
        groups.sort(key=lambda g: keys[g[0]])
        next_frontier = []
        seq = 0
        for group in groups:
            if len(group) == 1:
                next_frontier.append(frontier[group[0]])
                continue
            cid = f"c{band}.{seq}"
            seq += 1
            child_ids = sorted(frontier[i][0] for i in group)
            leaf_idx = sorted(p for i in group for p in frontier[i][1])
            mean = xyz[leaf_idx].sum(axis=0) / len(leaf_idx)
            nodes[cid] = ForestNode(
                id=cid,
                level=1 + max(nodes[c].level for c in child_ids),
                children=tuple(child_ids),
                parent=None,
                map_node=None,
                centroid=Pose(float(mean[0]), float(mean[1]), float(mean[2]), 0.0),
                summary=None,
                band=band,
            )
            for c in child_ids:
                nodes[c] = replace(nodes[c], parent=cid)
            next_frontier.append((cid, leaf_idx, min(frontier[i][2] for i in group)))
        frontier = next_frontier

    return SemanticForest(nodes=nodes, map_digest=map_digest(tmap))


class Summarizer(Protocol):
    def summarize(self, req: SummaryRequest) -> str: ...


def summarize_forest(forest: SemanticForest, summarizer: Summarizer, *, concurrency: int = 8,
                     budget: int = DEFAULT_SUMMARY_BUDGET) -> SemanticForest:
    """Fill every non-leaf summary from its direct children, one level at a time.

    Requests within a level run concurrently (at most ``concurrency`` in
    flight); a level starts only after the previous one is complete.
    """
    nodes = dict(forest.nodes)
    by_level: dict[int, list[str]] = defaultdict(list)
    for n in nodes.values():
        if not n.is_leaf:
            by_level[n.level].append(n.id)
        elif not n.summary:
            raise SummarizerError(n.id, ValueError("leaf has no caption"))

    def run(node_id: str) -> tuple[str, str]:
        node = nodes[node_id]
        req = SummaryRequest(tuple(nodes[c].summary for c in node.children), level=node.level,
                             budget=budget)
        try:
            text = summarizer.summarize(req)
        except Exception as exc:
            raise SummarizerError(node_id, exc) from exc
        if not isinstance(text, str) or not text.strip():
            raise SummarizerError(node_id, ValueError("empty summary"))
        return node_id, text

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        for level in sorted(by_level):
            for node_id, text in pool.map(run, sorted(by_level[level])):
                nodes[node_id] = replace(nodes[node_id], summary=text)
    return SemanticForest(nodes=nodes, map_digest=forest.map_digest)


def build_forest(tmap: TopologicalMap, summarizer: Summarizer, cfg: ClusteringConfig | None = None,
                 *, concurrency: int = 8, budget: int = DEFAULT_SUMMARY_BUDGET) -> SemanticForest:
    return summarize_forest(build_structure(tmap, cfg), summarizer, concurrency=concurrency,
                            budget=budget)


# -- persistence ----------------------------------------------------------------


def save_forest(forest: SemanticForest) -> bytes:
    header = {"format": FOREST_FORMAT, "version": FOREST_VERSION, "map_digest": forest.map_digest}
    lines = [json.dumps(header, separators=(",", ":"))]
    for nid in sorted(forest.nodes):
        n = forest.nodes[nid]
        rec = {
            "id": n.id,
            "level": n.level,
            "band": n.band,
            "parent": n.parent,
            "children": list(n.children),
            "map_node": n.map_node,
            "x": n.centroid.x,
            "y": n.centroid.y,
            "z": n.centroid.z,
            "yaw": n.centroid.yaw,
            "summary": n.summary,
        }
        lines.append(json.dumps(rec, ensure_ascii=False, separators=(",", ":")))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_forest(data: bytes | str, tmap: TopologicalMap | None = None) -> SemanticForest:
    """Parse and validate a forest file; with ``tmap``, also enforce the digest binding."""
    records = iter_records(data, FOREST_FORMAT, FOREST_VERSION)
    _, header = next(records)
    digest = header.get("map_digest")
    nodes: dict[str, ForestNode] = {}
    for lineno, rec in records:
        try:
            nid = rec["id"]
            node = ForestNode(
                id=nid,
                level=int(rec["level"]),
                band=int(rec.get("band", 0)),
                parent=rec["parent"],
                children=tuple(rec["children"]),
                map_node=rec["map_node"],
                centroid=Pose(rec["x"], rec["y"], rec["z"], rec["yaw"]),
                summary=rec["summary"],
            )
        except KeyError as exc:
            raise ParseError("missing field", line=lineno, field=str(exc.args[0]),
                             reason="MissingField") from None
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), line=lineno, reason="FieldType") from None
        if nid in nodes:
            raise ParseError(f"duplicate forest id {nid!r}", line=lineno, field="id",
                             reason="DuplicateId")
        nodes[nid] = node
    forest = SemanticForest(nodes=nodes, map_digest=digest)
    if tmap is not None and digest != map_digest(tmap):
        raise DigestMismatch("forest map_digest does not match the supplied map")
    forest.validate(tmap)
    return forest


def read_forest(path: str | Path, tmap: TopologicalMap | None = None) -> SemanticForest:
    return load_forest(Path(path).read_bytes(), tmap)


def write_forest(forest: SemanticForest, path: str | Path) -> None:
    Path(path).write_bytes(save_forest(forest))
