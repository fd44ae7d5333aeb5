"""Flat ``key = value`` config files.

Blank lines and ``#`` comments are ignored. Values are converted using the
target dataclass's field types.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .attention import ConfigError

_CASTS = {"int": int, "float": float, "str": str, "bool": lambda s: s.lower() in ("1", "true", "yes")}


def parse_flat(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_flat(path) -> dict[str, str]:
    return parse_flat(Path(path).read_text())


def coerce(cls, raw: dict[str, str]) -> dict:
    """Convert the entries of ``raw`` that name fields of ``cls``; other keys are ignored."""
    types = {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(cls)}
    out = {}
    for key, value in raw.items():
        if key not in types:
            continue
        try:
            out[key] = _CASTS[types[key]](value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {types[key]}") from None
    return out


def field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}
