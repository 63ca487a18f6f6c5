"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import os
import re

from .collocation import check_levels
from .icfg import WeightedICFG, load_profile

_SIZE = re.compile(r"^\s*(\d+)\s*([kKmM]?)\s*$")


def parse_size(text) -> int:
    """``4096``, ``4K`` or ``2M`` to a byte count."""
    if isinstance(text, int):
        return text
    m = _SIZE.match(str(text))
    if not m:
        raise ValueError(f"bad byte size {text!r}")
    scale = {"": 1, "k": 1024, "m": 1024 * 1024}[m.group(2).lower()]
    return int(m.group(1)) * scale


def parse_distance(text) -> float:
    if str(text).strip().lower() in ("inf", "infinity"):
        return float("inf")
    return parse_size(text)


def parse_levels(text) -> tuple[int, ...]:
    if isinstance(text, str):
        items = [t for t in text.split(",") if t.strip()]
    else:
        items = list(text)
    return check_levels(parse_size(t) for t in items)


def check_icfg(X) -> WeightedICFG:
    """Accept a :class:`WeightedICFG` or a path to a ``cfgprof`` file."""
    if isinstance(X, WeightedICFG):
        return X
    if isinstance(X, (str, os.PathLike)):
        return load_profile(X)
    raise TypeError(f"expected WeightedICFG or profile path, got {type(X).__name__}")


def check_non_negative_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return value
