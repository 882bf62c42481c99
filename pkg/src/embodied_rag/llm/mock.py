"""Deterministic offline backend. Every method is a pure function of its request."""

from __future__ import annotations

import hashlib
import json
import math

from ..errors import MalformedResponse
from .text import content_tokens, overlap, parse_chain, phrases, token_set, words
from .types import EmbeddingRequest, GenerationRequest, SelectionRequest, SummaryRequest

DEFAULT_DIM = 256


def _hash64(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


def hashed_bow(text: str, dim: int = DEFAULT_DIM) -> list[float]:
    """Signed feature-hashed bag of words, L2-normalized."""
    tokens = content_tokens(text) or words(text) or [" ".join(text.split()).lower()]
    vec = [0.0] * dim
    for tok in tokens:
        h = _hash64(tok)
        vec[h % dim] += 1.0 if (h >> 40) & 1 else -1.0
    norm = math.sqrt(math.fsum(v * v for v in vec))
    if norm == 0.0:
        # every token cancelled out by sign collisions; fall back to one bucket
        vec = [0.0] * dim
        vec[_hash64(text) % dim] = 1.0
        norm = 1.0
    return [v / norm for v in vec]


class MockBackend:
    name = "mock"

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        self.dim = dim

    def identity(self, role: str) -> str:
        return f"mock/{role}/dim={self.dim}" if role == "embedder" else f"mock/{role}"

    def summarize(self, req: SummaryRequest) -> str:
        seen: set[str] = set()
        kept: list[str] = []
        used = 0
        for child in req.child_summaries:
            for phrase in phrases(child):
                key = phrase.lower()
                if key in seen:
                    continue
                seen.add(key)
                n = len(phrase.split())
                if used + n > req.budget:
                    if not kept:
                        kept.append(" ".join(phrase.split()[: req.budget]))
                    return "; ".join(kept)
                kept.append(phrase)
                used += n
        return "; ".join(kept)

    def select(self, req: SelectionRequest, feedback: str | None = None) -> str | None:
        scores = [overlap(req.query, desc) for _, desc in req.candidates]
        best = max(scores)
        if best == 0 and req.allow_none:
            return None
        return req.candidates[scores.index(best)][0]

    def generate(self, req: GenerationRequest, feedback: str | None = None) -> str:
        parsed = [parse_chain(c) for c in req.chains]
        if any(not p for p in parsed):
            raise MalformedResponse("chain rendering could not be parsed")
        if req.mode == "navigate":
            return self._navigate(req.query, parsed)
        return self._explain(parsed)

    @staticmethod
    def _navigate(query: str, chains: list[list[tuple[int, str, str]]]) -> str:
        # leaf-first overlap vectors compared lexicographically; first chain wins ties
        q = token_set(query)
        vectors = [tuple(len(q & token_set(s)) for _, _, s in chain) for chain in chains]
        best = max(range(len(chains)), key=lambda i: (vectors[i], -i))
        chain = chains[best]
        matched = sorted(q & set().union(*(token_set(s) for _, _, s in chain)))
        if len(chains) == 1:
            reasoning = "Only one candidate location was retrieved."
        elif matched:
            reasoning = f"Its context mentions {', '.join(matched)}: {chain[0][2]}"
        else:
            reasoning = f"No retrieved location matches the request directly; closest context: {chain[0][2]}"
        return json.dumps({"waypoint": chain[0][1], "reasoning": reasoning})

    @staticmethod
    def _explain(chains: list[list[tuple[int, str, str]]]) -> str:
        lines: list[str] = []
        seen: set[str] = set()

        def add(text: str) -> None:
            if text not in seen:
                seen.add(text)
                lines.append(text)

        for chain in chains:
            add(chain[-1][2])
        for chain in chains:
            for level, _, summary in chain:
                if level == 1:
                    add(summary)
        return "\n".join(lines)

    def embed(self, req: EmbeddingRequest) -> list[float]:
        return hashed_bow(req.text, self.dim)
