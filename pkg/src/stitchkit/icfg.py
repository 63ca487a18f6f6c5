"""Weighted inter-procedural control-flow graph and its profile readers.

Two inputs are supported: the line-oriented ``cfgprof v1`` edge profile and
LBR-style branch traces paired with a block address map. Both produce a
:class:`WeightedICFG`, which the rest of the toolkit treats as immutable.
"""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

logger = logging.getLogger(__name__)

PROFILE_HEADER = "cfgprof v1"


class ICFGError(Exception):
    """Base class for profile ingestion failures."""


class ParseError(ICFGError):
    def __init__(self, line: int, reason: str, path: str | None = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")


class DanglingEdge(ICFGError):
    pass


class InvariantViolation(ICFGError):
    pass


class BlockId(NamedTuple):
    """Packed 64-bit basic block identifier.

    Tuple ordering matches the ordering of the packed integer, so sorting
    ``BlockId`` values is the same as sorting their packed forms.
    """

    module_tag: int
    function_id: int
    block_index: int

    def pack(self) -> int:
        return (self.module_tag << 48) | (self.function_id << 16) | self.block_index

    @classmethod
    def unpack(cls, value: int) -> "BlockId":
        if not 0 <= value < 1 << 64:
            raise ValueError(f"block id out of range: {value:#x}")
        return cls(value >> 48, (value >> 16) & 0xFFFFFFFF, value & 0xFFFF)

    @classmethod
    def parse(cls, text: str) -> "BlockId":
        return cls.unpack(int(text, 16))

    @property
    def function(self) -> tuple[int, int]:
        return (self.module_tag, self.function_id)

    @property
    def is_entry(self) -> bool:
        return self.block_index == 0

    def hex(self) -> str:
        return f"{self.pack():016x}"

    def __str__(self) -> str:
        return self.hex()


class Terminator(enum.Enum):
    CondBranch = "CondBranch"
    UncondJump = "UncondJump"
    Return = "Return"
    TailCall = "TailCall"
    IndirectJump = "IndirectJump"
    FallthroughOnly = "FallthroughOnly"


class EdgeKind(enum.Enum):
    Fallthrough = "Fallthrough"
    CondTaken = "CondTaken"
    UncondJump = "UncondJump"
    Call = "Call"
    TailCall = "TailCall"
    Return = "Return"

    @property
    def intra(self) -> bool:
        return self in INTRA_KINDS


INTRA_KINDS = frozenset({EdgeKind.Fallthrough, EdgeKind.CondTaken, EdgeKind.UncondJump})


@dataclass(frozen=True)
class BasicBlockInfo:
    id: BlockId
    byte_size: int
    exec_count: int = 0
    terminator: Terminator = Terminator.FallthroughOnly
    orig_address: int | None = None

    def __post_init__(self):
        if self.byte_size < 1:
            raise InvariantViolation(f"block {self.id} has byte_size {self.byte_size} < 1")
        if self.exec_count < 0:
            raise InvariantViolation(f"block {self.id} has negative exec_count")


@dataclass(frozen=True)
class TransferEdge:
    src: BlockId
    dst: BlockId
    kind: EdgeKind
    count: int


def _check_edge(src: BlockId, dst: BlockId, kind: EdgeKind, count: int) -> None:
    if count <= 0:
        raise InvariantViolation(f"edge {src}->{dst} has non-positive count {count}")
    if kind in (EdgeKind.Call, EdgeKind.TailCall) and not dst.is_entry:
        raise InvariantViolation(f"{kind.value} edge {src}->{dst} does not target a function entry")
    if kind.intra and src.function != dst.function:
        raise InvariantViolation(f"{kind.value} edge {src}->{dst} crosses functions")


@dataclass
class WeightedICFG:
    """Blocks plus counted control transfers.

    ``edges`` is keyed by ``(src, dst, kind)``; there is at most one record per
    key. ``functions`` lists each function's blocks in original program order.
    """

    blocks: dict[BlockId, BasicBlockInfo] = field(default_factory=dict)
    edges: dict[tuple[BlockId, BlockId, EdgeKind], int] = field(default_factory=dict)

    def add_block(self, info: BasicBlockInfo) -> None:
        if info.id in self.blocks:
            raise InvariantViolation(f"duplicate block {info.id}")
        self.blocks[info.id] = info

    def add_edge(self, src: BlockId, dst: BlockId, kind: EdgeKind, count: int) -> None:
        if src not in self.blocks or dst not in self.blocks:
            missing = src if src not in self.blocks else dst
            raise DanglingEdge(f"edge {src}->{dst} references unknown block {missing}")
        _check_edge(src, dst, kind, count)
        key = (src, dst, kind)
        self.edges[key] = self.edges.get(key, 0) + count

    @property
    def functions(self) -> dict[tuple[int, int], list[BlockId]]:
        funcs: dict[tuple[int, int], list[BlockId]] = defaultdict(list)
        for bid in sorted(self.blocks, key=self.original_key):
            funcs[bid.function].append(bid)
        return dict(sorted(funcs.items(), key=lambda kv: self.original_key(kv[1][0])))

    def original_key(self, bid: BlockId):
        """Sort key for original program order: address when known, else id."""
        addr = self.blocks[bid].orig_address
        return (0, addr, bid) if addr is not None else (1, 0, bid)

    def original_order(self) -> list[BlockId]:
        return sorted(self.blocks, key=self.original_key)

    def iter_edges(self) -> Iterator[TransferEdge]:
        for (src, dst, kind), count in self.edges.items():
            yield TransferEdge(src, dst, kind, count)

    def total_weight(self) -> int:
        return sum(self.edges.values())

    def out_edges(self) -> dict[BlockId, list[TransferEdge]]:
        out: dict[BlockId, list[TransferEdge]] = defaultdict(list)
        for e in self.iter_edges():
            out[e.src].append(e)
        return out

    def flow(self) -> dict[tuple[BlockId, BlockId], int]:
        """f(i, j) summed over edge kinds."""
        f: dict[tuple[BlockId, BlockId], int] = defaultdict(int)
        for (src, dst, _), count in self.edges.items():
            f[src, dst] += count
        return dict(f)

    def size(self, bid: BlockId) -> int:
        return self.blocks[bid].byte_size

    def copy(self) -> "WeightedICFG":
        return WeightedICFG(dict(self.blocks), dict(self.edges))

    def merge(self, other: "WeightedICFG") -> "WeightedICFG":
        """Additive merge; block counts and edge counts are summed."""
        out = self.copy()
        for bid, info in other.blocks.items():
            mine = out.blocks.get(bid)
            if mine is None:
                out.blocks[bid] = info
                continue
            if mine.byte_size != info.byte_size:
                raise InvariantViolation(f"block {bid} has conflicting sizes")
            out.blocks[bid] = BasicBlockInfo(
                bid,
                mine.byte_size,
                mine.exec_count + info.exec_count,
                mine.terminator,
                mine.orig_address if mine.orig_address is not None else info.orig_address,
            )
        for (src, dst, kind), count in other.edges.items():
            out.add_edge(src, dst, kind, count)
        return out

    def __eq__(self, other):
        if not isinstance(other, WeightedICFG):
            return NotImplemented
        return self.blocks == other.blocks and self.edges == other.edges


# --------------------------------------------------------------------------
# cfgprof v1


def parse_profile(lines: Iterable[str], path: str | None = None) -> WeightedICFG:
    g = WeightedICFG()
    pending: list[tuple[int, BlockId, BlockId, EdgeKind, int]] = []
    seen_header = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not seen_header:
            if line != PROFILE_HEADER:
                raise ParseError(lineno, f"expected header {PROFILE_HEADER!r}", path)
            seen_header = True
            continue
        parts = line.split()
        try:
            if parts[0] == "B":
                if len(parts) not in (7, 8):
                    raise ValueError("block line needs 6 or 7 fields")
                bid = BlockId(int(parts[1], 16), int(parts[2], 16), int(parts[3], 16))
                if bid.module_tag >= 1 << 16 or bid.function_id >= 1 << 32 or bid.block_index >= 1 << 16:
                    raise ValueError("block id field out of range")
                addr = int(parts[7], 16) if len(parts) == 8 else None
                try:
                    g.add_block(BasicBlockInfo(bid, int(parts[4]), int(parts[5]), Terminator(parts[6]), addr))
                except InvariantViolation as exc:
                    raise ParseError(lineno, str(exc), path) from None
            elif parts[0] == "E":
                if len(parts) != 5:
                    raise ValueError("edge line needs 4 fields")
                pending.append(
                    (lineno, BlockId.parse(parts[1]), BlockId.parse(parts[2]), EdgeKind(parts[3]), int(parts[4]))
                )
            else:
                raise ValueError(f"unknown record type {parts[0]!r}")
        except ValueError as exc:
            raise ParseError(lineno, str(exc), path) from None
    if not seen_header:
        raise ParseError(0, "empty profile", path)
    for lineno, src, dst, kind, count in pending:
        where = f"{path}:{lineno}" if path else f"line {lineno}"
        try:
            g.add_edge(src, dst, kind, count)
        except DanglingEdge as exc:
            raise DanglingEdge(f"{where}: {exc}") from None
        except InvariantViolation as exc:
            raise InvariantViolation(f"{where}: {exc}") from None
    return g


def load_profile(path) -> WeightedICFG:
    path = Path(path)
    with path.open() as fh:
        return parse_profile(fh, str(path))


def format_profile(g: WeightedICFG) -> str:
    """Canonical text: blocks in id order, edges in (src, dst, kind) order."""
    out = [PROFILE_HEADER]
    for bid in sorted(g.blocks):
        b = g.blocks[bid]
        line = (
            f"B {bid.module_tag:04x} {bid.function_id:08x} {bid.block_index:04x} "
            f"{b.byte_size} {b.exec_count} {b.terminator.value}"
        )
        if b.orig_address is not None:
            line += f" {b.orig_address:x}"
        out.append(line)
    for (src, dst, kind) in sorted(g.edges, key=lambda k: (k[0], k[1], k[2].value)):
        out.append(f"E {src.hex()} {dst.hex()} {kind.value} {g.edges[src, dst, kind]}")
    return "\n".join(out) + "\n"


def save_profile(g: WeightedICFG, path) -> None:
    Path(path).write_text(format_profile(g))


# --------------------------------------------------------------------------
# hot / cold


def split_hot_cold(g: WeightedICFG, threshold: int = 1) -> tuple[WeightedICFG, list[BlockId]]:
    """Induced subgraph on blocks with ``exec_count >= threshold``.

    The second value lists the cold blocks in original per-function order.
    """
    hot = WeightedICFG()
    cold = []
    for bid in g.original_order():
        if g.blocks[bid].exec_count >= threshold:
            hot.blocks[bid] = g.blocks[bid]
        else:
            cold.append(bid)
    hot.edges = {k: c for k, c in g.edges.items() if k[0] in hot.blocks and k[1] in hot.blocks}
    return hot, cold


def hot_subgraph(g: WeightedICFG, threshold: int = 1) -> WeightedICFG:
    return split_hot_cold(g, threshold)[0]


# --------------------------------------------------------------------------
# LBR ingestion


class LbrSample(NamedTuple):
    records: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class MappedBlock:
    start: int
    byte_size: int
    id: BlockId
    terminator: Terminator | None = None

    @property
    def end(self) -> int:
        return self.start + self.byte_size


class BlockMap:
    """Disjoint address ranges resolved to blocks."""

    def __init__(self, entries: Iterable[MappedBlock]):
        self.entries = sorted(entries, key=lambda m: m.start)
        for a, b in zip(self.entries, self.entries[1:]):
            if a.end > b.start:
                raise InvariantViolation(f"block map ranges overlap: {a.id} and {b.id}")
        self._starts = [m.start for m in self.entries]
        self._index = {m.id: i for i, m in enumerate(self.entries)}

    def __len__(self):
        return len(self.entries)

    def lookup(self, address: int) -> int | None:
        """Index of the entry containing ``address``, or None."""
        import bisect

        i = bisect.bisect_right(self._starts, address) - 1
        if i >= 0 and address < self.entries[i].end:
            return i
        return None

    def index_of(self, bid: BlockId) -> int:
        return self._index[bid]


def parse_block_map(lines: Iterable[str], path: str | None = None) -> BlockMap:
    entries = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] != "M" or len(parts) not in (4, 5):
                raise ValueError("expected 'M <start> <size> <block_id> [<terminator>]'")
            term = Terminator(parts[4]) if len(parts) == 5 else None
            entries.append(MappedBlock(int(parts[1], 16), int(parts[2]), BlockId.parse(parts[3]), term))
        except ValueError as exc:
            raise ParseError(lineno, str(exc), path) from None
    return BlockMap(entries)


def format_block_map(bmap: BlockMap) -> str:
    lines = []
    for m in bmap.entries:
        line = f"M {m.start:x} {m.byte_size} {m.id.hex()}"
        if m.terminator is not None:
            line += f" {m.terminator.value}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_lbr(lines: Iterable[str], path: str | None = None) -> Iterator[LbrSample]:
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        records = []
        for tok in line.split():
            try:
                src, dst = tok.split("->")
                records.append((int(src, 16), int(dst, 16)))
            except ValueError:
                raise ParseError(lineno, f"bad LBR record {tok!r}", path) from None
        yield LbrSample(tuple(records))


def format_lbr(samples: Iterable[LbrSample]) -> str:
    return "".join(" ".join(f"{s:x}->{d:x}" for s, d in sample.records) + "\n" for sample in samples)


@dataclass
class LbrStats:
    pairs: int = 0
    malformed_pairs: int = 0
    malformed_records: int = 0
    unmapped_records: int = 0


def _branch_kind(src: MappedBlock, dst: MappedBlock) -> EdgeKind | None:
    term = src.terminator
    same_fn = src.id.function == dst.id.function
    if term is Terminator.Return:
        return EdgeKind.Return
    if term is Terminator.TailCall:
        return EdgeKind.TailCall if dst.id.is_entry else None
    if term is Terminator.CondBranch:
        return EdgeKind.CondTaken if same_fn else None
    if term in (Terminator.UncondJump, Terminator.IndirectJump):
        return EdgeKind.UncondJump if same_fn else None
    # FallthroughOnly blocks end in a call, or no terminator info was mapped.
    if dst.id.is_entry and (not same_fn or term is Terminator.FallthroughOnly):
        return EdgeKind.Call
    if not same_fn:
        return EdgeKind.Return
    return EdgeKind.UncondJump


def _fallthrough_kind(a: MappedBlock, b: MappedBlock) -> EdgeKind | None:
    if a.end != b.start:
        return None
    if a.id.function == b.id.function:
        return EdgeKind.Fallthrough
    # a tail call whose callee entry was placed right behind it
    if b.id.is_entry and a.terminator in (None, Terminator.TailCall):
        return EdgeKind.TailCall
    return None


def ingest_lbr(samples: Iterable[LbrSample], block_map: BlockMap, stats: LbrStats | None = None) -> WeightedICFG:
    """Build a weighted ICFG from LBR samples.

    Every mapped record adds one to its branch edge. For each consecutive
    record pair ``(s1->d1), (s2->d2)`` every block in ``[d1, s2]`` is credited
    with one execution, with fall-throughs between address-adjacent blocks.
    Malformed pairs and unmapped records are skipped and counted in ``stats``.
    """
    stats = stats if stats is not None else LbrStats()
    entries = block_map.entries
    exec_counts: dict[int, int] = defaultdict(int)
    edges: dict[tuple[BlockId, BlockId, EdgeKind], int] = defaultdict(int)

    for sample in samples:
        resolved = []
        for s, d in sample.records:
            si, di = block_map.lookup(s), block_map.lookup(d)
            if si is None or di is None:
                stats.unmapped_records += 1
                resolved.append(None)
                continue
            kind = _branch_kind(entries[si], entries[di])
            if kind is None:
                stats.malformed_records += 1
                resolved.append(None)
                continue
            edges[entries[si].id, entries[di].id, kind] += 1
            resolved.append((si, di, s, d))
        for first, second in zip(resolved, resolved[1:]):
            if first is None or second is None:
                continue
            stats.pairs += 1
            _, d1, _, d1_addr = first
            s2, _, s2_addr, _ = second
            if s2_addr < d1_addr:
                stats.malformed_pairs += 1
                continue
            falls = [_fallthrough_kind(entries[a], entries[a + 1]) for a in range(d1, s2)]
            if None in falls:
                # hole in the executed range, or an impossible cross-function fall
                stats.malformed_pairs += 1
                continue
            for a in range(d1, s2 + 1):
                exec_counts[a] += 1
            for a, fk in zip(range(d1, s2), falls):
                edges[entries[a].id, entries[a + 1].id, fk] += 1

    g = WeightedICFG()
    for i, m in enumerate(entries):
        g.add_block(BasicBlockInfo(m.id, m.byte_size, exec_counts.get(i, 0),
                                   m.terminator or Terminator.FallthroughOnly, m.start))
    for (src, dst, kind), count in sorted(edges.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)):
        g.add_edge(src, dst, kind, count)
    if stats.malformed_pairs or stats.unmapped_records or stats.malformed_records:
        logger.info("lbr: %d malformed pairs, %d malformed records, %d unmapped records",
                    stats.malformed_pairs, stats.malformed_records, stats.unmapped_records)
    return g


def load_lbr(trace_path, map_path, stats: LbrStats | None = None) -> WeightedICFG:
    with open(map_path) as fh:
        bmap = parse_block_map(fh, str(map_path))
    with open(trace_path) as fh:
        return ingest_lbr(parse_lbr(fh, str(trace_path)), bmap, stats)
