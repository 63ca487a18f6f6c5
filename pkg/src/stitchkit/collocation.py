"""Hierarchical distance-bounded code collocation.

Chains from :mod:`stitchkit.chaining` form the initial partial layout. For
each distance level ``d`` sequences are greedily concatenated, densest merge
first, as long as a merge brings new transfers within ``d`` bytes of each
other. An optional :class:`ChainOrder` restricts which concatenations are
allowed, and :func:`finalize` turns the remaining sequences into a layout.
"""

from __future__ import annotations

import heapq
import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .chaining import PathCover
from .icfg import INTRA_KINDS, BlockId, EdgeKind, Terminator, WeightedICFG

DEFAULT_LEVELS = (4096, 32768, 131072, 262144, 524288, 2097152)

LAYOUT_HEADER = "cslayout v1"


class EmptyLevels(ValueError):
    pass


class NotABranch(ValueError):
    pass


# --------------------------------------------------------------------------
# partial layouts


@dataclass
class PartialLayout:
    """Disjoint block sequences. Distances across sequences are infinite."""

    sequences: list[tuple]
    sizes: Mapping

    @classmethod
    def from_chains(cls, chains: PathCover | Iterable[tuple], icfg: WeightedICFG) -> "PartialLayout":
        seqs = chains.chains if isinstance(chains, PathCover) else chains
        return cls([tuple(s) for s in seqs], {b: icfg.blocks[b].byte_size for s in seqs for b in s})

    def seq_size(self, seq) -> int:
        return sum(self.sizes[b] for b in seq)

    def block_offsets(self) -> list[dict]:
        """Per sequence: block -> (start, end) byte span within the sequence."""
        out = []
        for seq in self.sequences:
            offs, pos = {}, 0
            for b in seq:
                offs[b] = (pos, pos + self.sizes[b])
                pos += self.sizes[b]
            out.append(offs)
        return out

    def blocks(self) -> list:
        return [b for s in self.sequences for b in s]


def positions(seq: Sequence, sizes: Mapping) -> dict:
    """Forward and backward position ``(F, B)`` of every block in ``seq``.

    ``F`` runs from the sequence start to just after the block, ``B`` from
    the sequence end back to just before it; both include the block itself.
    """
    total = sum(sizes[b] for b in seq)
    out, pos = {}, 0
    for b in seq:
        out[b] = (pos + sizes[b], total - pos)
        pos += sizes[b]
    return out


def edge_weight(S: Sequence, T: Sequence, d: int, icfg: WeightedICFG, flow: Mapping | None = None) -> int:
    """Transfers between ``S`` and ``T`` that are within ``d`` bytes when T follows S."""
    flow = icfg.flow() if flow is None else flow
    sizes = {b: icfg.blocks[b].byte_size for b in itertools.chain(S, T)}
    ps, pt = positions(S, sizes), positions(T, sizes)
    w = 0
    for i in S:
        bi = ps[i][1]
        for j in T:
            if bi + pt[j][0] <= d:
                w += flow.get((i, j), 0) + flow.get((j, i), 0)
    return w


def t_d(partial: PartialLayout, icfg: WeightedICFG, d: int) -> int:
    """d-close transfers realised inside the sequences of ``partial``."""
    where = {}
    for k, offs in enumerate(partial.block_offsets()):
        for b, span in offs.items():
            where[b] = (k, span)
    total = 0
    for (i, j, _), count in icfg.edges.items():
        if i == j:
            if i in where:
                total += count
            continue
        a, b = where.get(i), where.get(j)
        if a is None or b is None or a[0] != b[0]:
            continue
        if max(a[1][1], b[1][1]) - min(a[1][0], b[1][0]) <= d:
            total += count
    return total


# --------------------------------------------------------------------------
# branch-prediction partial order


@dataclass
class ChainOrder:
    """Transitively closed precedence relation between chains.

    Chains are referred to by index into ``chains``; ``succ[a]`` holds every
    chain that must come after chain ``a``.
    """

    chains: list[tuple]
    succ: dict = field(default_factory=lambda: defaultdict(set))
    pred: dict = field(default_factory=lambda: defaultdict(set))

    def __post_init__(self):
        self.chain_of = {b: k for k, c in enumerate(self.chains) for b in c}

    def precedes(self, a: int, b: int) -> bool:
        return b in self.succ.get(a, ())

    def add(self, a: int, b: int) -> bool:
        """Accept ``a`` before ``b`` unless it contradicts the closure."""
        if a == b or self.precedes(b, a):
            return False
        if self.precedes(a, b):
            return True
        before = {a} | self.pred.get(a, set())
        after = {b} | self.succ.get(b, set())
        for x in before:
            self.succ[x] |= after
        for y in after:
            self.pred[y] |= before
        return True

    def pairs(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a, bs in self.succ.items() for b in bs)

    def is_strict_partial_order(self) -> bool:
        rel = set(self.pairs())
        for a, b in rel:
            if a == b or (b, a) in rel:
                return False
            for c in self.succ.get(b, ()):
                if (a, c) not in rel:
                    return False
        return True

    def __len__(self):
        return sum(len(v) for v in self.succ.values())


def _branch_targets(b: BlockId, icfg: WeightedICFG, out: Mapping | None = None):
    if icfg.blocks[b].terminator is not Terminator.CondBranch:
        raise NotABranch(f"{b} does not end in a conditional branch")
    out = icfg.out_edges() if out is None else out
    counts: dict = defaultdict(int)
    fall = None
    for e in out.get(b, ()):
        if e.kind in INTRA_KINDS and e.dst != b:
            counts[e.dst] += e.count
            if e.kind is EdgeKind.Fallthrough:
                fall = e.dst
    if not 1 <= len(counts) <= 2:
        raise NotABranch(f"{b} has {len(counts)} branch targets")
    ranked = sorted(counts, key=lambda t: (-counts[t], t != fall, t))
    likely = ranked[0]
    unlikely = ranked[1] if len(ranked) == 2 else None
    return likely, unlikely, counts[likely] - (counts[unlikely] if unlikely is not None else 0)


def compute_bd(b: BlockId, icfg: WeightedICFG) -> int:
    """Branch divergence: likely-target count minus unlikely-target count."""
    return _branch_targets(b, icfg)[2]


def branch_table(icfg: WeightedICFG) -> list[tuple]:
    """``(b, t_b, f_b, BD)`` for every two-way branch; f_b may be None."""
    out = icfg.out_edges()
    table = []
    for b in sorted(icfg.blocks):
        try:
            table.append((b, *_branch_targets(b, icfg, out)))
        except NotABranch:
            continue
    return table


def compute_bpp(S: Iterable, T: Iterable, icfg: WeightedICFG, table: list | None = None) -> int:
    """Branch-prediction profit of placing ``S`` before ``T``."""
    S, T = set(S), set(T)
    table = branch_table(icfg) if table is None else table
    profit = 0
    for b, likely, unlikely, bd in table:
        if b in S:
            if unlikely in T:
                profit += bd
            if likely in T:
                profit -= bd
        if b in T:
            if likely in S:
                profit += bd
            if unlikely in S:
                profit -= bd
    return profit


def bpp_matrix(chains: Sequence[tuple], icfg: WeightedICFG) -> dict[tuple[int, int], int]:
    """BPP(a, b) for every chain pair with ``a < b`` and a nonzero value."""
    chain_of = {blk: k for k, c in enumerate(chains) for blk in c}
    acc: dict = defaultdict(int)

    def credit(before, after, amount):
        if before == after:
            return
        if before < after:
            acc[before, after] += amount
        else:
            acc[after, before] -= amount

    for b, likely, unlikely, bd in branch_table(icfg):
        cb = chain_of.get(b)
        if cb is None:
            continue
        # the likely target should come first, the unlikely one after
        if likely in chain_of:
            credit(chain_of[likely], cb, bd)
        if unlikely is not None and unlikely in chain_of:
            credit(cb, chain_of[unlikely], bd)
    return {k: v for k, v in acc.items() if v}


def partial_order(chains: PathCover | Sequence[tuple], icfg: WeightedICFG, min_bpp: int = 0) -> ChainOrder:
    """Greedy branch-prediction ordering between chains, heaviest profit first."""
    seqs = list(chains.chains if isinstance(chains, PathCover) else chains)
    order = ChainOrder(seqs)
    candidates = []
    for (a, b), v in bpp_matrix(seqs, icfg).items():
        if abs(v) <= min_bpp:
            continue
        first, second = (a, b) if v > 0 else (b, a)
        candidates.append((-abs(v), seqs[first][0], seqs[second][0], first, second))
    candidates.sort()
    for _, _, _, first, second in candidates:
        order.add(first, second)
    return order


# --------------------------------------------------------------------------
# the merge solver


class _Merger:
    def __init__(self, partial: PartialLayout, d: int, icfg: WeightedICFG, order: ChainOrder | None):
        self.d = d
        self.sizes = partial.sizes
        self.order = order
        self.seqs: dict[int, list] = {}
        self.size: dict[int, int] = {}
        self.seq_of: dict = {}
        self.start: dict = {}
        self.ids = itertools.count()
        members = set(partial.blocks())
        self.nbr: dict = defaultdict(dict)
        for (i, j, _), count in icfg.edges.items():
            if i != j and i in members and j in members:
                self.nbr[i][j] = self.nbr[i].get(j, 0) + count
                self.nbr[j][i] = self.nbr[j].get(i, 0) + count
        self.chains: dict[int, set] = {}
        self.seq_of_chain: dict[int, int] = {}
        for seq in partial.sequences:
            self._add(list(seq))
        self.heap: list = []

    def _add(self, blocks: list) -> int:
        sid = next(self.ids)
        self.seqs[sid] = blocks
        pos = 0
        for b in blocks:
            self.seq_of[b] = sid
            self.start[b] = pos
            pos += self.sizes[b]
        self.size[sid] = pos
        if self.order is not None:
            cs = {self.order.chain_of[b] for b in blocks if b in self.order.chain_of}
            self.chains[sid] = cs
            for c in cs:
                self.seq_of_chain[c] = sid
        return sid

    def weights(self, x: int):
        """w(x, y) and w(y, x) for every sequence y sharing transfers with x."""
        d, size, seq_of, start, sizes = self.d, self.size, self.seq_of, self.start, self.sizes
        sx = size[x]
        fwd: dict = defaultdict(int)
        bwd: dict = defaultdict(int)
        for i in self.seqs[x]:
            b_i = sx - start[i]
            f_i = start[i] + sizes[i]
            for j, f in self.nbr.get(i, {}).items():
                y = seq_of[j]
                if y == x:
                    continue
                if b_i + start[j] + sizes[j] <= d:
                    fwd[y] += f
                if size[y] - start[j] + f_i <= d:
                    bwd[y] += f
        return fwd, bwd

    def push(self, x: int, y: int, w: int) -> None:
        if w > 0:
            density = Fraction(w, self.size[x] + self.size[y])
            heapq.heappush(self.heap, (-density, self.seqs[x][0], self.seqs[y][0], x, y, w))

    def push_all(self, x: int, only_greater: bool = False) -> None:
        fwd, bwd = self.weights(x)
        for y in sorted(set(fwd) | set(bwd)):
            if only_greater and y < x:
                continue
            self.push(x, y, fwd.get(y, 0))
            self.push(y, x, bwd.get(y, 0))

    # order constraints ------------------------------------------------

    def _seq_succ(self, s: int) -> set:
        out = set()
        for c in self.chains[s]:
            for c2 in self.order.succ.get(c, ()):
                out.add(self.seq_of_chain[c2])
        out.discard(s)
        return out

    def _reaches(self, sources: Iterable[int], target: int) -> bool:
        seen = set(sources)
        queue = deque(seen)
        while queue:
            s = queue.popleft()
            if s == target:
                return True
            for t in self._seq_succ(s):
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
        return False

    def allowed(self, x: int, y: int) -> bool:
        if self.order is None:
            return True
        cx, cy = self.chains[x], self.chains[y]
        for c in cy:
            if self.order.succ.get(c, set()) & cx:
                return False
        # contracting x and y must not close a cycle through other sequences
        if self._reaches([y], x):
            return False
        return not self._reaches(self._seq_succ(x) - {y}, y)

    # ------------------------------------------------------------------

    def run(self, on_merge: Callable | None = None) -> list[tuple]:
        for x in list(self.seqs):
            self.push_all(x, only_greater=True)
        while self.heap:
            _, _, _, x, y, w = heapq.heappop(self.heap)
            if x not in self.seqs or y not in self.seqs:
                continue
            if not self.allowed(x, y):
                continue
            left, right = self.seqs.pop(x), self.seqs.pop(y)
            del self.size[x], self.size[y]
            self.chains.pop(x, None)
            self.chains.pop(y, None)
            z = self._add(left + right)
            if on_merge is not None:
                on_merge(tuple(left), tuple(right), w)
            self.push_all(z)
        return [tuple(s) for s in self.seqs.values()]


def solve_level(layout: PartialLayout, d: int, icfg: WeightedICFG, order: ChainOrder | None = None,
                on_merge: Callable | None = None) -> PartialLayout:
    """Greedy d-close partial layout for one distance level.

    ``on_merge(left, right, gain)`` is called after every concatenation.
    """
    if d <= 0:
        raise ValueError(f"distance level must be positive, got {d}")
    merger = _Merger(layout, d, icfg, order)
    seqs = merger.run(on_merge)
    seqs.sort(key=lambda s: s[0])
    return PartialLayout(seqs, layout.sizes)


def check_levels(levels: Iterable[int]) -> tuple[int, ...]:
    levels = tuple(int(x) for x in levels)
    if not levels:
        raise EmptyLevels("at least one distance level is required")
    if any(x <= 0 for x in levels):
        raise ValueError("distance levels must be positive")
    if any(a >= b for a, b in zip(levels, levels[1:])):
        raise ValueError(f"distance levels must be strictly increasing: {levels}")
    return levels


def hierarchical_layout(chains: PathCover | PartialLayout, levels: Iterable[int] = DEFAULT_LEVELS,
                        icfg: WeightedICFG | None = None, order: ChainOrder | None = None,
                        on_merge: Callable | None = None) -> PartialLayout:
    levels = check_levels(levels)
    partial = chains if isinstance(chains, PartialLayout) else PartialLayout.from_chains(chains, icfg)
    for d in levels:
        partial = solve_level(partial, d, icfg, order, on_merge)
    return partial


# --------------------------------------------------------------------------
# final layouts


@dataclass
class Layout:
    """Total block order with byte offsets assigned from 0."""

    order: list
    sizes: dict
    hot_count: int = 0
    offsets: dict = field(init=False)

    def __post_init__(self):
        self.offsets = {}
        pos = 0
        for b in self.order:
            if b in self.offsets:
                raise ValueError(f"block {b} appears twice in layout")
            self.offsets[b] = pos
            pos += self.sizes[b]
        self.total_size = pos

    def end(self, b) -> int:
        return self.offsets[b] + self.sizes[b]

    def span(self, i, j) -> int:
        return max(self.end(i), self.end(j)) - min(self.offsets[i], self.offsets[j])

    def __contains__(self, b):
        return b in self.offsets

    def __len__(self):
        return len(self.order)

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return self.order == other.order and self.sizes == other.sizes


def _density_key(seq, icfg: WeightedICFG):
    weight = sum(icfg.blocks[b].exec_count for b in seq)
    size = sum(icfg.blocks[b].byte_size for b in seq)
    return (-Fraction(weight, size), -weight, seq[0])


def finalize(partial: PartialLayout, cold_blocks: Sequence, icfg: WeightedICFG,
             order: ChainOrder | None = None) -> Layout:
    """Sort hot sequences by execution density, then append the cold blocks.

    With ``order``, sequences are emitted by a topological pass that picks the
    densest sequence whose predecessors have all been placed.
    """
    seqs = sorted(partial.sequences, key=lambda s: _density_key(s, icfg))
    if order is not None and len(order):
        seqs = _topological(seqs, order)
    hot = [b for s in seqs for b in s]
    sizes = {b: icfg.blocks[b].byte_size for b in itertools.chain(hot, cold_blocks)}
    return Layout(hot + list(cold_blocks), sizes, len(hot))


def _topological(seqs: list[tuple], order: ChainOrder) -> list[tuple]:
    seq_of_chain = {}
    for k, s in enumerate(seqs):
        for b in s:
            c = order.chain_of.get(b)
            if c is not None:
                seq_of_chain[c] = k
    succ = defaultdict(set)
    indeg = [0] * len(seqs)
    for a, b in order.pairs():
        sa, sb = seq_of_chain.get(a), seq_of_chain.get(b)
        if sa is None or sb is None or sa == sb or sb in succ[sa]:
            continue
        succ[sa].add(sb)
        indeg[sb] += 1
    ready = [k for k in range(len(seqs)) if indeg[k] == 0]
    heapq.heapify(ready)
    placed, out = set(), []
    while len(out) < len(seqs):
        if not ready:
            # cyclic leftovers cannot be honoured fully; take the densest
            k = min(k for k in range(len(seqs)) if k not in placed)
        else:
            k = heapq.heappop(ready)
            if k in placed:
                continue
        placed.add(k)
        out.append(seqs[k])
        for n in succ[k]:
            indeg[n] -= 1
            if indeg[n] == 0 and n not in placed:
                heapq.heappush(ready, n)
    return out


def audit_order(layout: Layout, order: ChainOrder) -> list[tuple[int, int]]:
    """Constrained chain pairs ``(a, b)`` whose blocks are not all in a-then-b order."""
    lo, hi = {}, {}
    for k, c in enumerate(order.chains):
        offs = [layout.offsets[b] for b in c if b in layout]
        if offs:
            lo[k], hi[k] = min(offs), max(offs)
    return [(a, b) for a, b in order.pairs() if a in lo and b in lo and hi[a] >= lo[b]]


def format_layout(layout: Layout) -> str:
    lines = [LAYOUT_HEADER]
    for rank, b in enumerate(layout.order):
        lines.append(f"L {rank} {b.hex()} {layout.offsets[b]} {layout.sizes[b]}")
    return "\n".join(lines) + "\n"


def parse_layout(lines: Iterable[str], path: str | None = None) -> Layout:
    from .icfg import ParseError

    order, sizes, offsets = [], {}, []
    header = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header:
            if line != LAYOUT_HEADER:
                raise ParseError(lineno, f"expected header {LAYOUT_HEADER!r}", path)
            header = True
            continue
        parts = line.split()
        try:
            if parts[0] != "L" or len(parts) != 5:
                raise ValueError("expected 'L <rank> <block_id> <offset> <byte_size>'")
            rank, bid, offset, size = int(parts[1]), BlockId.parse(parts[2]), int(parts[3]), int(parts[4])
        except ValueError as exc:
            raise ParseError(lineno, str(exc), path) from None
        if rank != len(order):
            raise ParseError(lineno, f"rank {rank} out of sequence", path)
        if bid in sizes:
            raise ParseError(lineno, f"block {bid} listed twice", path)
        order.append(bid)
        sizes[bid] = size
        offsets.append((lineno, offset))
    layout = Layout(order, sizes)
    for (lineno, offset), bid in zip(offsets, order):
        if layout.offsets[bid] != offset:
            raise ParseError(lineno, f"offset {offset} does not follow the preceding blocks", path)
    return layout


def load_layout(path) -> Layout:
    path = Path(path)
    with path.open() as fh:
        return parse_layout(fh, str(path))


def save_layout(layout: Layout, path) -> None:
    Path(path).write_text(format_layout(layout))
