"""Pipeline configuration stored as ``key=value`` lines."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ._validation import parse_levels, parse_size
from .chaining import DEFAULT_MAX_ASSIGNMENT_BLOCKS, ChainingMode
from .collocation import DEFAULT_LEVELS
from .evaluation import CacheConfig, TlbConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    distance_levels: tuple = DEFAULT_LEVELS
    hot_threshold: int = 1
    enable_partial_order: bool = False
    chaining_mode: str = "combined"
    min_bpp: int = 0
    max_assignment_blocks: int = DEFAULT_MAX_ASSIGNMENT_BLOCKS
    baselines: tuple = ("ph", "ph-bb", "c3", "original")
    c3_size_cap: int = 4096
    c3_hotness: str = "calls"
    icache_line_size: int = 64
    icache_sets: int = 64
    icache_ways: int = 8
    itlb_page_size: int = 4096
    itlb_entries: int = 128
    itlb_ways: int = 4
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "distance_levels", parse_levels(self.distance_levels))
            ChainingMode(self.chaining_mode)
            self.cache
            self.tlb
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        from .estimators import STRATEGIES

        for name in self.baselines:
            if name not in STRATEGIES:
                raise ConfigError(f"unknown baseline {name!r}")
        if self.c3_hotness not in ("calls", "samples"):
            raise ConfigError(f"unknown c3_hotness {self.c3_hotness!r}")
        for name in ("hot_threshold", "min_bpp", "max_assignment_blocks", "c3_size_cap", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.seed >= 1 << 64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def cache(self) -> CacheConfig:
        return CacheConfig(self.icache_line_size, self.icache_sets, self.icache_ways)

    @property
    def tlb(self) -> TlbConfig:
        return TlbConfig(self.itlb_page_size, self.itlb_entries, self.itlb_ways)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, tuple):
                text = ",".join(str(x) for x in v)
            else:
                text = str(v)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise ConfigError(f"line {lineno}: unknown or malformed setting {line!r}")
            try:
                values[key] = _convert(key, types[key], value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _convert(key: str, typ: str, value: str):
    if typ == "bool":
        if value.lower() in ("true", "1", "yes", "on"):
            return True
        if value.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if key == "distance_levels":
        return parse_levels(value)
    if typ == "tuple":
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if typ == "int":
        return parse_size(value) if key.endswith(("_size", "_cap")) else int(value)
    return value
