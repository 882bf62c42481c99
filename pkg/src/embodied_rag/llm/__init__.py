from .gateway import ROLES, Gateway, ResponseCache, request_digest
from .mock import MockBackend, hashed_bow
from .remote import RemoteBackend, parse_navigation
from .types import (
    DEFAULT_SUMMARY_BUDGET,
    EmbeddingRequest,
    GenerationRequest,
    SelectionRequest,
    SummaryRequest,
)

__all__ = [
    "DEFAULT_SUMMARY_BUDGET",
    "EmbeddingRequest",
    "Gateway",
    "GenerationRequest",
    "MockBackend",
    "ROLES",
    "RemoteBackend",
    "ResponseCache",
    "SelectionRequest",
    "SummaryRequest",
    "hashed_bow",
    "parse_navigation",
    "request_digest",
]
