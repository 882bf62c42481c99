"""Versioned prompt templates (``<name>.v<version>.txt``, ``string.Template`` syntax).

Set ``ERAG_PROMPT_DIR`` to a directory holding files with the same names to
swap the wording without touching code.
"""

from __future__ import annotations

import os
from functools import lru_cache
from importlib import resources
from pathlib import Path
from string import Template

VERSION = 1


@lru_cache(maxsize=None)
def _read(name: str, version: int, override: str | None) -> str:
    filename = f"{name}.v{version}.txt"
    if override:
        candidate = Path(override) / filename
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return resources.files(__name__).joinpath(filename).read_text(encoding="utf-8")


def template(name: str, version: int = VERSION) -> Template:
    return Template(_read(name, version, os.environ.get("ERAG_PROMPT_DIR")))


def render(name: str, version: int = VERSION, **values: object) -> str:
    return template(name, version).substitute({k: str(v) for k, v in values.items()})
