"""Three retrieval strategies over a summarized forest.

* ``semantic_match``: the single leaf whose caption embedding is closest to
  the query.
* ``rag``: the top-k leaves by the same cosine score.
* ``embodied_rag``: k leaf-to-root chains found by greedy LLM-guided descents,
  split across the trees of the forest and run concurrently per tree.

Note on N: in the per-tree quota, N is the number of trees (forest roots);
it is unrelated to the number of map nodes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import EmbodiedRagError, NotALeaf
from .forest import SemanticForest
from .llm.gateway import Gateway
from .llm.types import EmbeddingRequest, SelectionRequest

QueryKind = Literal["explicit", "implicit", "global"]
Method = Literal["semantic_match", "rag", "embodied_rag"]
QUERY_KINDS = ("explicit", "implicit", "global")
METHODS = ("semantic_match", "rag", "embodied_rag")
DEFAULT_K = 10
SCORE_DECIMALS = 12


@dataclass(frozen=True)
class Query:
    text: str
    kind: QueryKind = "explicit"

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("query text must be nonempty")
        if self.kind not in QUERY_KINDS:
            raise ValueError(f"unknown query kind {self.kind!r}")


@dataclass(frozen=True)
class Chain:
    node_ids: tuple[str, ...]
    rendering: str

    @property
    def leaf(self) -> str:
        return self.node_ids[0]

    @property
    def root(self) -> str:
        return self.node_ids[-1]


@dataclass(frozen=True)
class DescentStep:
    node: str
    candidates: tuple[str, ...]
    selected: str

    def to_record(self) -> dict:
        return {"node": self.node, "candidates": list(self.candidates), "selected": self.selected}


@dataclass
class RetrievalResult:
    method: Method
    leaves: list[str]
    scores: list[float] = field(default_factory=list)
    chains: list[Chain] = field(default_factory=list)
    # one list of steps per descent, in chain order
    traces: list[list[DescentStep]] = field(default_factory=list)
    quotas: dict[str, int] = field(default_factory=dict)

    def context_chains(self, forest: SemanticForest) -> list[Chain]:
        """Chains handed to generation; baselines get one-node chains."""
        if self.chains:
            return list(self.chains)
        return [Chain((leaf,), _render_line(forest, leaf)) for leaf in self.leaves]

    def to_record(self) -> dict:
        rec: dict = {"method": self.method, "leaves": list(self.leaves)}
        if self.scores:
            rec["scores"] = list(self.scores)
        if self.chains:
            rec["chains"] = [list(c.node_ids) for c in self.chains]
            rec["quotas"] = dict(self.quotas)
        return rec

    def trace_record(self) -> list[dict]:
        return [
            {"leaf": leaf, "steps": [s.to_record() for s in steps]}
            for leaf, steps in zip(self.leaves, self.traces)
        ]


# -- rendering --------------------------------------------------------------------


def _render_line(forest: SemanticForest, node_id: str) -> str:
    n = forest.node(node_id)
    c = n.centroid
    summary = " ".join((n.summary or "").split())
    return f"L{n.level} {n.id} ({c.x:.2f}, {c.y:.2f}, {c.z:.2f}): {summary}"


def render_chain(forest: SemanticForest, leaf_id: str) -> Chain:
    """Chain of ``leaf_id`` rendered one node per line, leaf first::

        L<level> <id> (<x>, <y>, <z>): <summary>

    Coordinates are the node centroid at two decimals; the summary is
    whitespace-collapsed onto the line.
    """
    ids = forest.chain(leaf_id)
    return Chain(tuple(ids), "\n".join(_render_line(forest, i) for i in ids))


# -- similarity baselines -------------------------------------------------------------


def leaf_scores(forest: SemanticForest, query: Query | str, gateway: Gateway) -> list[tuple[str, float]]:
    """Cosine similarity of the query to every leaf caption, leaves in id order.

    Scores are rounded to 12 decimals so that mathematically equal cosines
    tie exactly and fall back to id order.
    """
    text = query.text if isinstance(query, Query) else query
    leaves = forest.leaves()
    q = np.asarray(gateway.embed(EmbeddingRequest(text)), dtype=float)
    mat = np.asarray([gateway.embed(EmbeddingRequest(forest.nodes[l].summary)) for l in leaves],
                     dtype=float)
    sims = mat @ q
    return [(leaf, round(float(s), SCORE_DECIMALS)) for leaf, s in zip(leaves, sims)]


def _ranked(scored: list[tuple[str, float]]) -> list[tuple[str, float]]:
    return sorted(scored, key=lambda t: (-t[1], t[0]))


def retrieve_semantic_match(forest: SemanticForest, query: Query | str, gateway: Gateway) -> RetrievalResult:
    leaf, score = _ranked(leaf_scores(forest, query, gateway))[0]
    return RetrievalResult("semantic_match", [leaf], [score])


def retrieve_rag(forest: SemanticForest, query: Query | str, gateway: Gateway,
                 k: int = DEFAULT_K) -> RetrievalResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    top = _ranked(leaf_scores(forest, query, gateway))[:k]
    return RetrievalResult("rag", [l for l, _ in top], [s for _, s in top])


# -- chain retrieval --------------------------------------------------------------------


def allocate_quotas(leaf_counts: dict[str, int], k: int) -> dict[str, int]:
    """Per-tree descent counts summing to ``min(k, total leaves)``.

    Trees are ordered by (descending leaf count, root id). Each of the N
    trees gets floor(k/N) descents and the first k mod N get one more. A
    tree with fewer leaves than its share yields all of them, and the
    surplus is handed out one descent at a time, cycling through the same
    order over trees that still have unselected leaves.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(leaf_counts, key=lambda r: (-leaf_counts[r], r))
    if not order:
        return {}
    base, rem = divmod(k, len(order))
    quotas = {r: min(leaf_counts[r], base + (1 if i < rem else 0)) for i, r in enumerate(order)}
    surplus = min(k, sum(leaf_counts.values())) - sum(quotas.values())
    while surplus > 0:
        for r in order:
            if surplus > 0 and quotas[r] < leaf_counts[r]:
                quotas[r] += 1
                surplus -= 1
    return quotas


class _TreeWalker:
    """Greedy descents on one tree; selected leaves are exhausted so later
    descents cannot revisit them, and empty subtrees drop out of candidacy."""

    def __init__(self, forest: SemanticForest, root: str, query: str, gateway: Gateway) -> None:
        self.forest = forest
        self.root = root
        self.query = query
        self.gateway = gateway
        self.remaining: dict[str, int] = {}
        self._count(root)

    def _count(self, node_id: str) -> int:
        node = self.forest.nodes[node_id]
        total = 1 if node.is_leaf else sum(self._count(c) for c in node.children)
        self.remaining[node_id] = total
        return total

    def descend(self) -> tuple[str, list[DescentStep]]:
        steps: list[DescentStep] = []
        node = self.forest.nodes[self.root]
        try:
            while not node.is_leaf:
                cands = [c for c in node.children if self.remaining[c] > 0]
                req = SelectionRequest(self.query, [(c, self.forest.nodes[c].summary or "") for c in cands])
                chosen = self.gateway.select(req)
                steps.append(DescentStep(node.id, tuple(cands), chosen))
                node = self.forest.nodes[chosen]
        except EmbodiedRagError as exc:
            exc.trace = [s.to_record() for s in steps]
            raise
        cur: str | None = node.id
        while cur is not None:
            self.remaining[cur] -= 1
            cur = self.forest.nodes[cur].parent
        return node.id, steps


def retrieve_embodied(forest: SemanticForest, query: Query | str, gateway: Gateway,
                      k: int = DEFAULT_K, *, concurrency: int = 8) -> RetrievalResult:
    """Best-k chains: per-tree quotas, greedy selector descents, trees in parallel."""
    text = query.text if isinstance(query, Query) else query
    counts = {r: len(forest.leaves_under(r)) for r in forest.roots}
    quotas = allocate_quotas(counts, k)

    def run_tree(root: str) -> list[tuple[str, list[DescentStep]]]:
        walker = _TreeWalker(forest, root, text, gateway)
        return [walker.descend() for _ in range(quotas[root])]

    roots = [r for r in forest.roots if quotas[r] > 0]
    with ThreadPoolExecutor(max_workers=max(1, min(concurrency, len(roots)))) as pool:
        per_tree = list(pool.map(run_tree, roots))
    result = RetrievalResult("embodied_rag", [], quotas=quotas)
    for found in per_tree:
        for leaf, steps in found:
            result.leaves.append(leaf)
            result.chains.append(render_chain(forest, leaf))
            result.traces.append(steps)
    return result


def retrieve(forest: SemanticForest, query: Query | str, gateway: Gateway, method: Method,
             k: int = DEFAULT_K, *, concurrency: int = 8) -> RetrievalResult:
    if method == "semantic_match":
        return retrieve_semantic_match(forest, query, gateway)
    if method == "rag":
        return retrieve_rag(forest, query, gateway, k)
    if method == "embodied_rag":
        return retrieve_embodied(forest, query, gateway, k, concurrency=concurrency)
    raise ValueError(f"unknown method {method!r}")


__all__ = [
    "Chain",
    "DescentStep",
    "METHODS",
    "NotALeaf",
    "QUERY_KINDS",
    "Query",
    "RetrievalResult",
    "allocate_quotas",
    "leaf_scores",
    "render_chain",
    "retrieve",
    "retrieve_embodied",
    "retrieve_rag",
    "retrieve_semantic_match",
]
