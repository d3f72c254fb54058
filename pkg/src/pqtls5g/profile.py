"""Line-oriented ``key = value`` profile files.

One format serves cost profiles, network profiles and scenario files::

    # comment
    mlkem512.encaps_cost = 50
    link.ue1_gnb.prop_delay = 2.0
    suites = mlkem512_mldsa44, hqc128_falcon512

Blank lines and ``#`` comments are ignored; a trailing ``# ...`` after a value
is stripped. Keys are case-insensitive and stored lowercase. Duplicate keys are
an error so a typo never silently shadows an earlier line.
"""

from __future__ import annotations

import os
from pathlib import Path


class MalformedProfile(ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


def parse_profile_text(text: str, source: str = "<string>") -> dict[str, tuple[str, int]]:
    """Return ``{key: (raw_value, lineno)}`` for every assignment in *text*."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedProfile(source, lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(ch.isspace() for ch in key):
            raise MalformedProfile(source, lineno, f"invalid key {key!r}")
        if not value:
            raise MalformedProfile(source, lineno, f"missing value for {key!r}")
        key = key.lower()
        if key in entries:
            raise MalformedProfile(source, lineno, f"duplicate key {key!r} (first on line {entries[key][1]})")
        entries[key] = (value, lineno)
    return entries


def read_profile(path: str | os.PathLike) -> dict[str, tuple[str, int]]:
    p = Path(path)
    return parse_profile_text(p.read_text(encoding="utf-8"), source=str(p))


def as_float(value: str, source: str, lineno: int, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise MalformedProfile(source, lineno, f"{key}: expected a number, got {value!r}") from None


def as_int(value: str, source: str, lineno: int, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedProfile(source, lineno, f"{key}: expected an integer, got {value!r}") from None


def as_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]
