"""Request types accepted by the gateway. Validation happens at construction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

from ..errors import InvalidRequest

DEFAULT_SUMMARY_BUDGET = 256

Mode = Literal["navigate", "explain"]


@dataclass(frozen=True)
class SummaryRequest:
    child_summaries: tuple[str, ...]
    level: int = 1
    budget: int = DEFAULT_SUMMARY_BUDGET

    def __post_init__(self) -> None:
        object.__setattr__(self, "child_summaries", tuple(self.child_summaries))
        if not self.child_summaries:
            raise InvalidRequest("child_summaries must be nonempty")
        if self.budget < 1:
            raise InvalidRequest("budget must be positive")


@dataclass(frozen=True)
class SelectionRequest:
    query: str
    candidates: tuple[tuple[str, str], ...]
    allow_none: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple((str(c), str(d)) for c, d in self.candidates))
        if not self.candidates:
            raise InvalidRequest("candidates must be nonempty")
        ids = [c for c, _ in self.candidates]
        if len(set(ids)) != len(ids):
            raise InvalidRequest("candidate ids must be unique")

    @property
    def candidate_ids(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.candidates)


@dataclass(frozen=True)
class GenerationRequest:
    query: str
    chains: tuple[str, ...]
    mode: Mode = "navigate"
    # corrective note appended on a retry after an invalid answer
    feedback: str | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "chains", tuple(self.chains))
        if not self.chains:
            raise InvalidRequest("chains must be nonempty")
        if self.mode not in ("navigate", "explain"):
            raise InvalidRequest(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class EmbeddingRequest:
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise InvalidRequest("text must be nonempty")
