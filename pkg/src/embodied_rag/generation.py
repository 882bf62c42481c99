"""Turn retrieved chains into a waypoint (plus planned path) or a text answer."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .errors import InvalidRequest, MalformedResponse, UnknownNode
from .forest import SemanticForest
from .llm.gateway import Gateway
from .llm.remote import parse_navigation
from .llm.types import GenerationRequest
from .retrieval import DEFAULT_K, Chain, Method, Query, RetrievalResult, retrieve
from .topo_map import TopologicalMap

logger = logging.getLogger(__name__)

FALLBACK_WARNING = "fallback_waypoint"


@dataclass(frozen=True)
class AgentState:
    current_node: str

    @classmethod
    def initial(cls, tmap: TopologicalMap, current_node: str | None = None) -> AgentState:
        """Start at ``current_node``, or at the first map node in id order."""
        if current_node is None:
            current_node = tmap.nodes[0].id
        tmap.node(current_node)
        return cls(current_node)


@dataclass
class NavigationResult:
    waypoint: str
    map_node: str
    reasoning: str
    path: list[str]
    warnings: list[str] = field(default_factory=list)
    retrieval: RetrievalResult | None = None

    def payload(self) -> dict:
        return {"type": "navigation", "waypoint": self.waypoint, "map_node": self.map_node,
                "reasoning": self.reasoning, "path": list(self.path)}


@dataclass
class AnswerResult:
    answer: str
    cited_chains: list[Chain]
    warnings: list[str] = field(default_factory=list)
    retrieval: RetrievalResult | None = None

    def __post_init__(self) -> None:
        if not self.answer or not self.answer.strip():
            raise MalformedResponse("generator produced an empty answer")

    def payload(self) -> dict:
        return {"type": "answer", "answer": self.answer,
                "cited_chains": [list(c.node_ids) for c in self.cited_chains]}


def _query_text(query: Query | str) -> str:
    return query.text if isinstance(query, Query) else query


def _choose(gateway: Gateway, req: GenerationRequest, leaves: list[str],
            forest: SemanticForest) -> tuple[str, str]:
    wp, reasoning = parse_navigation(gateway.generate(req))
    if wp not in leaves and forest.leaf_index.get(wp) in leaves:
        wp = forest.leaf_index[wp]  # answered with the map-node id
    if wp not in leaves:
        raise MalformedResponse(f"waypoint {wp!r} is not one of the retrieved leaves")
    return wp, reasoning


def generate_navigation(query: Query | str, chains: list[Chain], state: AgentState,
                        tmap: TopologicalMap, forest: SemanticForest, gateway: Gateway) -> NavigationResult:
    """Ask the generator for one leaf among ``chains`` and plan a path to it.

    A reply naming a non-candidate leaf gets one corrective retry; after that
    the first chain's leaf is used and the result carries a warning.
    Unreachable waypoints raise :class:`~embodied_rag.errors.Unreachable`.
    """
    if not chains:
        raise InvalidRequest("navigation needs at least one chain")
    tmap.node(state.current_node)
    leaves = [c.leaf for c in chains]
    req = GenerationRequest(_query_text(query), tuple(c.rendering for c in chains), "navigate")
    warnings: list[str] = []
    try:
        try:
            wp, reasoning = _choose(gateway, req, leaves, forest)
        except MalformedResponse as first:
            retry = replace(req, feedback=(
                f"\n\nYour previous reply was unusable ({first}). "
                f"The waypoint must be one of: {', '.join(leaves)}."))
            wp, reasoning = _choose(gateway, retry, leaves, forest)
    except MalformedResponse as exc:
        logger.warning("generator gave no usable waypoint (%s); using first chain", exc)
        wp = leaves[0]
        reasoning = f"Fallback: the generator gave no usable waypoint, so the top retrieved location {wp} was chosen."
        warnings.append(FALLBACK_WARNING)
    map_node = forest.node(wp).map_node
    if map_node is None:
        raise UnknownNode(f"{wp!r} is not a leaf")
    path = tmap.shortest_path(state.current_node, map_node)
    return NavigationResult(wp, map_node, reasoning, path, warnings)


def generate_text_answer(query: Query | str, chains: list[Chain], gateway: Gateway) -> AnswerResult:
    if not chains:
        raise InvalidRequest("an answer needs at least one chain")
    req = GenerationRequest(_query_text(query), tuple(c.rendering for c in chains), "explain")
    return AnswerResult(gateway.generate(req), list(chains))


def run_query(query: Query, k: int, state: AgentState, tmap: TopologicalMap, forest: SemanticForest,
              method: Method, gateway: Gateway, *, concurrency: int = 8) -> NavigationResult | AnswerResult:
    """Retrieve with ``method`` then generate: explicit and implicit queries
    navigate, global queries are answered in text."""
    retrieved = retrieve(forest, query, gateway, method, k, concurrency=concurrency)
    chains = retrieved.context_chains(forest)
    if query.kind == "global":
        result: NavigationResult | AnswerResult = generate_text_answer(query, chains, gateway)
    else:
        result = generate_navigation(query, chains, state, tmap, forest, gateway)
    result.retrieval = retrieved
    return result


def result_record(query: Query, method: str, k: int, result: NavigationResult | AnswerResult | None,
                  *, error: BaseException | None = None, elapsed: float | None = None,
                  query_id: str | None = None, trace: bool = False) -> dict:
    """Self-contained record for one query: the unit emitted by the CLI and
    consumed by evaluation."""
    rec: dict = {}
    if query_id is not None:
        rec["id"] = query_id
    rec.update({"query": query.text, "kind": query.kind, "method": method, "k": k})
    if result is not None:
        rec["result"] = result.payload()
        if result.retrieval is not None:
            rec["retrieval"] = result.retrieval.to_record()
            if trace:
                rec["trace"] = result.retrieval.trace_record()
        rec["warnings"] = list(result.warnings)
    else:
        rec["result"] = None
        rec["warnings"] = []
    if error is not None:
        rec["error"] = {"type": type(error).__name__, "message": str(error)}
    if elapsed is not None:
        rec["timing_ms"] = round(elapsed * 1000.0, 3)
    return rec


class Stopwatch:
    def __enter__(self) -> Stopwatch:
        self.start = time.perf_counter()
        self.elapsed = 0.0
        return self

    def __exit__(self, *exc) -> None:
        self.elapsed = time.perf_counter() - self.start
