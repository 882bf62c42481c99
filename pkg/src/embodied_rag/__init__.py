"""Hierarchical spatial memory for robots: a topological map summarized into a
semantic forest, retrieved as leaf-to-root chains and turned into waypoints
or text answers."""

from .forest import ClusteringConfig, ForestNode, SemanticForest, build_forest, build_structure
from .generation import AgentState, AnswerResult, NavigationResult, run_query
from .llm import Gateway, MockBackend
from .retrieval import Chain, Query, RetrievalResult, retrieve
from .topo_map import MapNode, Pose, TopoEdge, TopologicalMap

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "AnswerResult",
    "Chain",
    "ClusteringConfig",
    "ForestNode",
    "Gateway",
    "MapNode",
    "MockBackend",
    "NavigationResult",
    "Pose",
    "Query",
    "RetrievalResult",
    "SemanticForest",
    "TopoEdge",
    "TopologicalMap",
    "build_forest",
    "build_structure",
    "retrieve",
    "run_query",
]
