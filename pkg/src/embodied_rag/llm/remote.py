"""OpenAI-compatible HTTP backend.

Each method performs exactly one request; retries and caching belong to the
gateway. Transport failures, 429 and 5xx come back as retryable
:class:`ProviderError`, other HTTP errors as fatal ones.
"""

from __future__ import annotations

import json
import math
import os
import re

import httpx

from ..errors import MalformedResponse, ProviderError
from . import prompts
from .types import EmbeddingRequest, GenerationRequest, SelectionRequest, SummaryRequest

ENV_API_KEY = "ERAG_API_KEY"
ENV_BASE_URL = "ERAG_BASE_URL"
ENV_MODEL = {
    "summarizer": "ERAG_SUMMARIZER_MODEL",
    "selector": "ERAG_SELECTOR_MODEL",
    "generator": "ERAG_GENERATOR_MODEL",
    "embedder": "ERAG_EMBEDDER_MODEL",
}
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODELS = {
    "summarizer": "gpt-4o-mini",
    "selector": "gpt-4o-mini",
    "generator": "gpt-4o",
    "embedder": "text-embedding-3-small",
}


def parse_navigation(text: str) -> tuple[str, str]:
    """Extract ``(waypoint, reasoning)`` from a JSON object embedded in ``text``."""
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise MalformedResponse("no JSON object in generator output", raw=text)
    try:
        obj = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        raise MalformedResponse("generator output is not valid JSON", raw=text) from None
    waypoint = obj.get("waypoint") if isinstance(obj, dict) else None
    if not isinstance(waypoint, str) or not waypoint.strip():
        raise MalformedResponse("generator output has no waypoint field", raw=text)
    reasoning = obj.get("reasoning", "")
    if not isinstance(reasoning, str):
        reasoning = json.dumps(reasoning)
    return waypoint.strip(), reasoning


def match_candidate(text: str, candidate_ids: tuple[str, ...]) -> str | None:
    """Map a free-text selector reply onto a candidate id, or ``None`` if ambiguous."""
    cleaned = text.strip().strip("`\"'").strip()
    if cleaned in candidate_ids:
        return cleaned
    first = cleaned.split()[0].strip(".,:;`\"'") if cleaned.split() else ""
    if first in candidate_ids:
        return first
    found = [c for c in candidate_ids if re.search(rf"(?<!\S){re.escape(c)}(?![\w.:-])", cleaned)]
    return found[0] if len(found) == 1 else None


class RemoteBackend:
    name = "remote"

    def __init__(self, *, base_url: str | None = None, api_key: str | None = None,
                 models: dict[str, str] | None = None, timeout: float = 60.0,
                 client: httpx.Client | None = None) -> None:
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.models = dict(DEFAULT_MODELS)
        for role, var in ENV_MODEL.items():
            if os.environ.get(var):
                self.models[role] = os.environ[var]
        self.models.update(models or {})
        self._client = client or httpx.Client(timeout=timeout)

    def identity(self, role: str) -> str:
        return f"remote/{self.base_url}/{self.models[role]}"

    # -- transport ----------------------------------------------------------

    def _post(self, path: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(f"{self.base_url}{path}", json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise ProviderError(f"timeout: {exc}", retryable=True) from exc
        except httpx.TransportError as exc:
            raise ProviderError(f"transport error: {exc}", retryable=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ProviderError(f"HTTP {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
        try:
            return resp.json()
        except ValueError:
            raise ProviderError("response body is not JSON", retryable=True) from None

    def _chat(self, role: str, prompt: str, max_tokens: int | None = None) -> str:
        payload = {
            "model": self.models[role],
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        if max_tokens:
            payload["max_tokens"] = max_tokens
        body = self._post("/chat/completions", payload)
        try:
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse("chat response missing choices[0].message.content",
                                    raw=json.dumps(body)[:500]) from None

    # -- roles --------------------------------------------------------------

    def summarize(self, req: SummaryRequest) -> str:
        children = "\n".join(f"- {s}" for s in req.child_summaries)
        prompt = prompts.render("summarize", count=len(req.child_summaries), level=req.level,
                                children=children, budget=req.budget)
        text = " ".join(self._chat("summarizer", prompt, max_tokens=2 * req.budget).split())
        if not text:
            raise MalformedResponse("empty summary")
        return " ".join(text.split()[: req.budget])

    def select(self, req: SelectionRequest, feedback: str | None = None) -> str | None:
        candidates = "\n".join(f"{cid}: {' '.join(desc.split())}" for cid, desc in req.candidates)
        none_clause = ' If none is compatible at all, reply "none".' if req.allow_none else ""
        prompt = prompts.render("select", query=req.query, candidates=candidates,
                                none_clause=none_clause)
        if feedback:
            prompt += feedback
        text = self._chat("selector", prompt, max_tokens=32)
        if req.allow_none and text.strip().strip(".\"'`").lower() == "none":
            return None
        chosen = match_candidate(text, req.candidate_ids)
        if chosen is None:
            raise MalformedResponse(f"selector reply names no candidate: {text[:80]!r}", raw=text)
        return chosen

    def generate(self, req: GenerationRequest, feedback: str | None = None) -> str:
        chains = "\n\n".join(f"Context {i + 1}:\n{c}" for i, c in enumerate(req.chains))
        name = "navigate" if req.mode == "navigate" else "explain"
        prompt = prompts.render(name, query=req.query, chains=chains)
        note = feedback or req.feedback
        if note:
            prompt += note
        text = self._chat("generator", prompt)
        if req.mode == "navigate":
            parse_navigation(text)
        elif not text.strip():
            raise MalformedResponse("empty answer")
        return text

    def embed(self, req: EmbeddingRequest) -> list[float]:
        body = self._post("/embeddings", {"model": self.models["embedder"], "input": req.text})
        try:
            vec = [float(v) for v in body["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError):
            raise MalformedResponse("embedding response missing data[0].embedding") from None
        norm = math.sqrt(math.fsum(v * v for v in vec))
        if not vec or norm == 0.0:
            raise MalformedResponse("zero embedding vector")
        return [v / norm for v in vec]
