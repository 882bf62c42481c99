"""Uniform access to summarizer / selector / generator / embedder roles with a
persistent response cache, bounded concurrency and jittered retries."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import Counter
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable

from ..errors import InvalidRequest, MalformedResponse, ProviderError
from . import prompts
from .mock import MockBackend
from .remote import RemoteBackend, parse_navigation
from .types import EmbeddingRequest, GenerationRequest, SelectionRequest, SummaryRequest

logger = logging.getLogger(__name__)

ROLES = ("summarizer", "selector", "generator", "embedder")
CACHE_FORMAT = "erag-cache"
CACHE_VERSION = 1
_MISSING = object()


class ResponseCache:
    """Request-digest -> response store backed by an append-only JSONL log.

    Later lines win on load; :meth:`compact` rewrites the log with one line
    per key. Without a path the cache lives in memory only.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._data: dict[str, Any] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    # torn final write from an interrupted run
                    logger.warning("%s:%d: skipping unreadable cache line", self.path, lineno)
                    continue
                if "key" in rec:
                    self._data[rec["key"]] = rec["response"]

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def get(self, key: str, default: Any = None) -> Any:
        with self._lock:
            return self._data.get(key, default)

    def put(self, key: str, role: str, response: Any) -> None:
        with self._lock:
            self._data[key] = response
            if self.path is None:
                return
            new = not self.path.exists()
            with self.path.open("a", encoding="utf-8") as fh:
                if new:
                    fh.write(json.dumps({"format": CACHE_FORMAT, "version": CACHE_VERSION}) + "\n")
                fh.write(json.dumps({"key": key, "role": role, "response": response}) + "\n")

    def compact(self) -> None:
        if self.path is None:
            return
        with self._lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                fh.write(json.dumps({"format": CACHE_FORMAT, "version": CACHE_VERSION}) + "\n")
                for key in sorted(self._data):
                    fh.write(json.dumps({"key": key, "response": self._data[key]}) + "\n")
            os.replace(tmp, self.path)


def request_digest(role: str, identity: str, req: object) -> str:
    payload = {"role": role, "backend": identity, "request": asdict(req)}
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Gateway:
    """Routes each role to a backend and adds caching, retries and a cap on
    in-flight provider calls. Safe to share between threads.

    ``requests`` counts calls into the gateway per role; ``provider_calls``
    counts calls that actually reached a backend.
    """

    def __init__(
        self,
        backends: dict[str, Any] | Any | None = None,
        *,
        cache: ResponseCache | None = None,
        max_attempts: int = 3,
        base_delay: float = 0.5,
        max_delay: float = 8.0,
        max_in_flight: int = 8,
        seed: int = 0,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if backends is None:
            backends = MockBackend()
        if not isinstance(backends, dict):
            backends = {role: backends for role in ROLES}
        missing = set(ROLES) - set(backends)
        if missing:
            raise ValueError(f"no backend for roles {sorted(missing)}")
        self.backends = dict(backends)
        self.cache = cache
        self.max_attempts = max(1, max_attempts)
        self.base_delay = base_delay
        self.max_delay = max_delay
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._rng = random.Random(seed)
        self._rng_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self._sleep = sleep
        self.requests: Counter[str] = Counter()
        self.provider_calls: Counter[str] = Counter()

    @classmethod
    def from_selection(cls, selection: dict[str, str] | str = "mock", *, cache_path: str | Path | None = None,
                       client=None, **kwargs) -> Gateway:
        """Build from a ``role -> "mock" | "remote"`` mapping (or one name for all roles)."""
        if isinstance(selection, str):
            selection = {role: selection for role in ROLES}
        mock, remote = None, None
        backends = {}
        for role in ROLES:
            kind = selection.get(role, "mock")
            if kind == "mock":
                mock = mock or MockBackend()
                backends[role] = mock
            elif kind == "remote":
                remote = remote or RemoteBackend(client=client)
                backends[role] = remote
            else:
                raise ValueError(f"unknown backend {kind!r} for role {role}")
        cache = ResponseCache(cache_path) if cache_path is not None else ResponseCache()
        return cls(backends, cache=cache, **kwargs)

    # -- plumbing -------------------------------------------------------------

    def _count(self, counter: Counter, role: str) -> None:
        with self._stats_lock:
            counter[role] += 1

    def _backoff(self, attempt: int) -> float:
        with self._rng_lock:
            jitter = self._rng.uniform(0.5, 1.5)
        return min(self.max_delay, self.base_delay * (2 ** attempt)) * jitter

    def _invoke(self, role: str, fn: Callable[..., Any], req: object, corrective: str | None) -> Any:
        """Call a backend with retries on transient errors and one corrective
        retry on an unusable response."""
        feedback = None
        corrected = False
        attempt = 0
        while True:
            try:
                with self._slots:
                    self._count(self.provider_calls, role)
                    if feedback is None:
                        return fn(req)
                    return fn(req, feedback=feedback)
            except ProviderError as exc:
                attempt += 1
                if not exc.retryable or attempt >= self.max_attempts:
                    raise
                delay = self._backoff(attempt - 1)
                logger.warning("%s: %s; retry %d in %.2fs", role, exc, attempt, delay)
                self._sleep(delay)
            except MalformedResponse as exc:
                if corrective is None or corrected:
                    raise
                corrected = True
                feedback = prompts.render("corrective", problem=str(exc), instruction=corrective)

    def _cached(self, role: str, req: object, compute: Callable[[], Any]) -> Any:
        self._count(self.requests, role)
        backend = self.backends[role]
        key = request_digest(role, backend.identity(role), req)
        if self.cache is not None:
            hit = self.cache.get(key, _MISSING)
            if hit is not _MISSING:
                return hit
        result = compute()
        if self.cache is not None:
            self.cache.put(key, role, result)
        return result

    # -- roles ------------------------------------------------------------------

    def summarize(self, req: SummaryRequest) -> str:
        backend = self.backends["summarizer"]
        return self._cached("summarizer", req,
                            lambda: self._invoke("summarizer", backend.summarize, req, None))

    def select(self, req: SelectionRequest) -> str | None:
        if not isinstance(req, SelectionRequest):
            raise InvalidRequest("select() takes a SelectionRequest")
        if len(req.candidates) == 1 and not req.allow_none:
            self._count(self.requests, "selector")
            return req.candidates[0][0]
        backend = self.backends["selector"]
        ids = ", ".join(req.candidate_ids)
        corrective = f"Reply with exactly one of these ids: {ids}."
        result = self._cached("selector", req,
                              lambda: self._invoke("selector", backend.select, req, corrective))
        if result is None and not req.allow_none or result is not None and result not in req.candidate_ids:
            raise MalformedResponse(f"selector returned {result!r}, not a candidate id")
        return result

    def generate(self, req: GenerationRequest) -> str:
        backend = self.backends["generator"]
        corrective = "Reply with a nonempty answer."
        if req.mode == "navigate":
            corrective = 'Reply with only a JSON object of the form {"waypoint": "<level-0 id>", "reasoning": "<text>"}.'

        def checked(r: GenerationRequest, feedback: str | None = None) -> str:
            # validate inside the retry loop so an unusable reply is corrected, not cached
            text = backend.generate(r) if feedback is None else backend.generate(r, feedback=feedback)
            if r.mode == "navigate":
                parse_navigation(text)
            elif not isinstance(text, str) or not text.strip():
                raise MalformedResponse("generator returned an empty answer", raw=text)
            return text

        return self._cached("generator", req, lambda: self._invoke("generator", checked, req, corrective))

    def embed(self, req: EmbeddingRequest) -> list[float]:
        backend = self.backends["embedder"]
        return self._cached("embedder", req,
                            lambda: self._invoke("embedder", backend.embed, req, None))

    def embed_text(self, text: str) -> list[float]:
        return self.embed(EmbeddingRequest(text))
