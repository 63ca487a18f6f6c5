"""Layout scoring: d-close transfer counts and trace-driven cache/TLB replay."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .collocation import DEFAULT_LEVELS, Layout
from .icfg import BlockId, WeightedICFG


class UnknownBlock(KeyError):
    def __init__(self, blocks):
        self.blocks = sorted(set(blocks))
        shown = ", ".join(str(b) for b in self.blocks[:10])
        more = f" (+{len(self.blocks) - 10} more)" if len(self.blocks) > 10 else ""
        super().__init__(f"{len(self.blocks)} block(s) missing from layout: {shown}{more}")

    def __str__(self):
        return self.args[0]


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    """Set-associative LRU instruction cache. Defaults: 32 KB, 8-way, 64 B lines."""

    line_size: int = 64
    num_sets: int = 64
    associativity: int = 8
    replacement: str = "LRU"

    def __post_init__(self):
        if not (_is_pow2(self.line_size) and _is_pow2(self.num_sets)):
            raise ValueError("line_size and num_sets must be powers of two")
        if self.associativity < 1:
            raise ValueError("associativity must be positive")
        if self.replacement != "LRU":
            raise ValueError(f"unsupported replacement policy {self.replacement!r}")

    @property
    def capacity(self) -> int:
        return self.line_size * self.num_sets * self.associativity


@dataclass(frozen=True)
class TlbConfig:
    """Instruction TLB. Defaults: 128 entries, 4-way, 4 KB pages."""

    page_size: int = 4096
    entries: int = 128
    associativity: int = 4

    def __post_init__(self):
        if not _is_pow2(self.page_size):
            raise ValueError("page_size must be a power of two")
        if self.entries < 1 or self.associativity < 1 or self.entries % self.associativity:
            raise ValueError("entries must be a positive multiple of associativity")

    @property
    def num_sets(self) -> int:
        return self.entries // self.associativity


class SetAssociativeLRU:
    """Set-associative LRU over integer tags (line or page numbers)."""

    def __init__(self, num_sets: int, associativity: int):
        self.num_sets = num_sets
        self.associativity = associativity
        self.sets = [OrderedDict() for _ in range(num_sets)]
        self.misses = 0
        self.accesses = 0

    def access(self, tag: int) -> bool:
        """Touch ``tag``; returns True on a hit."""
        self.accesses += 1
        ways = self.sets[tag % self.num_sets]
        if tag in ways:
            ways.move_to_end(tag)
            return True
        self.misses += 1
        if len(ways) >= self.associativity:
            ways.popitem(last=False)
        ways[tag] = None
        return False


def _check_trace(trace: Sequence, layout: Layout) -> None:
    missing = [b for b in set(trace) if b not in layout]
    if missing:
        raise UnknownBlock(missing)


def _replay(trace: Sequence, layout: Layout, granule: int, num_sets: int, ways: int) -> int:
    _check_trace(trace, layout)
    sim = SetAssociativeLRU(num_sets, ways)
    spans = {}
    for b in set(trace):
        start = layout.offsets[b]
        spans[b] = range(start // granule, (start + layout.sizes[b] - 1) // granule + 1)
    for b in trace:
        for tag in spans[b]:
            sim.access(tag)
    return sim.misses


def replay_trace(trace: Sequence, layout: Layout, cache: CacheConfig = CacheConfig()) -> int:
    """I-cache misses when executing ``trace`` (block ids) under ``layout``."""
    return _replay(trace, layout, cache.line_size, cache.num_sets, cache.associativity)


def replay_tlb(trace: Sequence, layout: Layout, tlb: TlbConfig = TlbConfig()) -> int:
    return _replay(trace, layout, tlb.page_size, tlb.num_sets, tlb.associativity)


def count_d_close(layout: Layout, icfg: WeightedICFG, d: float) -> int:
    """Sum of f(i, j) over transfers whose span in ``layout`` is at most ``d``."""
    total = 0
    missing = set()
    for (i, j, _), count in icfg.edges.items():
        if i == j:
            total += count
            continue
        if i not in layout or j not in layout:
            missing.update(b for b in (i, j) if b not in layout)
            continue
        if layout.span(i, j) <= d:
            total += count
    if missing:
        raise UnknownBlock(missing)
    return total


def count_adjacent(layout: Layout, icfg: WeightedICFG) -> int:
    """Transfers between blocks that touch in the layout (self-transfers included)."""
    total = 0
    for (i, j, _), count in icfg.edges.items():
        if i == j or layout.end(i) == layout.offsets[j] or layout.end(j) == layout.offsets[i]:
            total += count
    return total


def instruction_estimate(trace: Iterable, layout: Layout) -> int:
    """Executed instructions, estimated as byte_size / 4 per executed block."""
    return sum(layout.sizes[b] for b in trace) // 4


@dataclass
class LayoutMetrics:
    total_transfers: int
    d_close_counts: dict = field(default_factory=dict)
    adjacent_transfers: int = 0
    simulated_icache_mpki: float | None = None
    simulated_itlb_mpki: float | None = None
    icache_misses: int | None = None
    itlb_misses: int | None = None

    def as_dict(self) -> dict:
        out = asdict(self)
        out["d_close_counts"] = {_dist_label(d): v for d, v in self.d_close_counts.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def _dist_label(d) -> str:
    return "inf" if d == float("inf") else str(int(d))


def evaluate(layout: Layout, icfg: WeightedICFG, distances: Iterable = DEFAULT_LEVELS,
             trace: Sequence | None = None, cache: CacheConfig = CacheConfig(),
             tlb: TlbConfig = TlbConfig()) -> LayoutMetrics:
    missing = [b for b in icfg.blocks if b not in layout]
    if missing:
        raise UnknownBlock(missing)
    counts = {d: count_d_close(layout, icfg, d) for d in sorted(set(distances))}
    metrics = LayoutMetrics(icfg.total_weight(), counts, count_adjacent(layout, icfg))
    if trace is not None:
        instructions = instruction_estimate(trace, layout) or 1
        metrics.icache_misses = replay_trace(trace, layout, cache)
        metrics.itlb_misses = replay_tlb(trace, layout, tlb)
        metrics.simulated_icache_mpki = round(1000 * metrics.icache_misses / instructions, 6)
        metrics.simulated_itlb_mpki = round(1000 * metrics.itlb_misses / instructions, 6)
    return metrics


def format_metrics(metrics: LayoutMetrics, name: str | None = None) -> str:
    """``key=value`` lines followed by an aligned table."""
    flat = _flatten(metrics)
    prefix = f"{name}." if name else ""
    lines = [f"{prefix}{k}={v}" for k, v in flat]
    width = max(len(k) for k, _ in flat)
    lines.append("")
    lines.extend(f"{k.ljust(width)}  {v:>14}" for k, v in flat)
    return "\n".join(lines) + "\n"


def _flatten(metrics: LayoutMetrics) -> list[tuple[str, str]]:
    flat = [("total_transfers", str(metrics.total_transfers)),
            ("adjacent_transfers", str(metrics.adjacent_transfers))]
    for d, v in metrics.d_close_counts.items():
        flat.append((f"d_close@{_dist_label(d)}", str(v)))
    for key in ("icache_misses", "itlb_misses", "simulated_icache_mpki", "simulated_itlb_mpki"):
        v = getattr(metrics, key)
        if v is not None:
            flat.append((key, str(v)))
    return flat


def format_comparison(rows: Sequence[tuple[str, LayoutMetrics]]) -> str:
    table = [(name, dict(_flatten(m))) for name, m in rows]
    columns = list(dict.fromkeys(k for _, row in table for k in row))
    widths = [max(len(c), *(len(row.get(c, "-")) for _, row in table)) for c in columns]
    name_w = max(len("strategy"), *(len(n) for n, _ in table))
    out = ["strategy".ljust(name_w) + "  " + "  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    for name, row in table:
        out.append(name.ljust(name_w) + "  " + "  ".join(row.get(c, "-").rjust(w) for c, w in zip(columns, widths)))
    return "\n".join(out) + "\n"


def load_trace(path) -> list[BlockId]:
    trace = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            trace.append(BlockId.parse(line))
    return trace


def save_trace(trace: Iterable[BlockId], path) -> None:
    Path(path).write_text("".join(f"{b.hex()}\n" for b in trace))
