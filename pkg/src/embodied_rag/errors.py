"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EmbodiedRagError(Exception):
    """Base class for every error raised by this package."""


class MapError(EmbodiedRagError):
    pass


class DuplicateId(MapError):
    pass


class InvalidPose(MapError):
    pass


class UnknownNode(EmbodiedRagError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown node"


class SelfLoop(MapError):
    pass


class NegativeCost(MapError):
    pass


class Unreachable(MapError):
    pass


class ParseError(EmbodiedRagError):
    """Malformed input file.

    ``reason`` names the underlying failure class (e.g. ``"DuplicateId"``)
    so callers can branch on it without string matching.
    """

    def __init__(self, message: str, *, line: int | None = None,
                 field: str | None = None, reason: str | None = None) -> None:
        self.line = line
        self.field = field
        self.reason = reason
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ForestError(EmbodiedRagError):
    pass


class EmptyMap(ForestError):
    pass


class NotALeaf(ForestError):
    pass


class InvariantViolation(ForestError):
    pass


class DigestMismatch(ForestError):
    pass


class SummarizerError(ForestError):
    def __init__(self, node_id: str, cause: BaseException) -> None:
        self.node_id = node_id
        self.cause = cause
        super().__init__(f"summarizing {node_id}: {cause}")


class GatewayError(EmbodiedRagError):
    pass


class InvalidRequest(GatewayError, ValueError):
    pass


class ProviderError(GatewayError):
    def __init__(self, message: str, *, retryable: bool = False) -> None:
        self.retryable = retryable
        super().__init__(message)


class MalformedResponse(GatewayError):
    def __init__(self, message: str, *, raw: str | None = None, trace=None) -> None:
        self.raw = raw
        self.trace = trace
        super().__init__(message)


class InvalidSpec(EmbodiedRagError, ValueError):
    pass
