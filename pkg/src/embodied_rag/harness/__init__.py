"""Synthetic worlds, dataset ingestion and method scoring."""

from .dataset import bundled_dataset, export_world, ingest_dataset, load_queries, save_queries
from .evaluate import EvalReport, KSweep, ablate_k, evaluate, term_coverage
from .world import BUY_DRINKS, MARKET, PARK, GoldQuery, ImplicitFamily, RegionSpec, CategorySpec, WorldSpec, generate_world

__all__ = [
    "BUY_DRINKS",
    "CategorySpec",
    "EvalReport",
    "GoldQuery",
    "ImplicitFamily",
    "KSweep",
    "MARKET",
    "PARK",
    "RegionSpec",
    "WorldSpec",
    "bundled_dataset",
    "ablate_k",
    "evaluate",
    "export_world",
    "generate_world",
    "ingest_dataset",
    "load_queries",
    "save_queries",
    "term_coverage",
]
