"""Tokenization shared by the offline backends."""

from __future__ import annotations

import re

_WORD = re.compile(r"[a-z0-9]+")
_PHRASE_SPLIT = re.compile(r"[;\n]+|,\s*")

STOP_WORDS = frozenset("""
a about above across after along also am an and any are around as at be been beside between
but by can could did do does for from get give go had has have here how i in into is it its
like me my near next of off on onto or our over please show so some that the their them there
these they this those to under up us want was we were what when where which while who why will
with would you your find place tell
""".split())


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def content_tokens(text: str) -> list[str]:
    """Lowercase word tokens with stop words removed, in order (repeats kept)."""
    return [w for w in words(text) if w not in STOP_WORDS]


def token_set(text: str) -> frozenset[str]:
    return frozenset(content_tokens(text))


def overlap(query: str, text: str) -> int:
    """Number of distinct query content tokens that also occur in ``text``."""
    return len(token_set(query) & token_set(text))


def phrases(text: str) -> list[str]:
    """Split a caption or summary into phrase units on ``;``, ``,`` and newlines."""
    return [" ".join(p.split()) for p in _PHRASE_SPLIT.split(text) if p.strip()]


# One line per chain node, leaf first:  "L<level> <node id> (<x>, <y>, <z>): <summary>"
_CHAIN_LINE = re.compile(r"^L(\d+) (\S+) \(([^)]*)\): (.*)$")


def parse_chain(rendering: str) -> list[tuple[int, str, str]]:
    """Recover ``(level, node id, summary)`` triples from a chain rendering."""
    out = []
    for line in rendering.splitlines():
        m = _CHAIN_LINE.match(line)
        if m:
            out.append((int(m.group(1)), m.group(2), m.group(4)))
    return out
