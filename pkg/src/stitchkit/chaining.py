"""Basic block chaining: fall-through maximization as a weighted path cover.

Vertices of a :class:`ChainGraph` can be any mutually comparable hashable
values (``BlockId`` in the pipeline, strings in tests); comparison order is
the deterministic tie-break everywhere.
"""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .icfg import INTRA_KINDS, EdgeKind, Terminator, WeightedICFG

logger = logging.getLogger(__name__)

DEFAULT_MAX_ASSIGNMENT_BLOCKS = 2000


class ChainingMode(enum.Enum):
    Greedy = "greedy"
    CycleCover = "cycle-cover"
    Combined = "combined"


@dataclass
class ChainGraph:
    vertices: set = field(default_factory=set)
    arcs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arcs = {k: w for k, w in self.arcs.items() if k[0] != k[1]}
        for u, v in self.arcs:
            self.vertices.add(u)
            self.vertices.add(v)

    def sorted_arcs(self):
        """Arcs by decreasing weight, ties by ascending (src, dst)."""
        return sorted(self.arcs.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass
class PathCover:
    chains: list[tuple]
    covered_weight: int

    def __len__(self):
        return len(self.chains)

    def vertices(self) -> list:
        return [v for c in self.chains for v in c]


def cover_weight(chains: Iterable[tuple], arcs: Mapping) -> int:
    return sum(arcs.get((u, v), 0) for c in chains for u, v in zip(c, c[1:]))


def _make_cover(succ: dict, vertices: Iterable, arcs: Mapping) -> PathCover:
    has_pred = set(succ.values())
    chains = []
    for v in sorted(vertices):
        if v in has_pred:
            continue
        chain = [v]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        chains.append(tuple(chain))
    return PathCover(chains, cover_weight(chains, arcs))


class _Chains:
    """Tail/head bookkeeping for incremental path building."""

    def __init__(self, chains: Iterable[tuple]):
        self.succ = {}
        self.pred = {}
        self.parent = {}
        for c in chains:
            for v in c:
                self.parent[v] = c[0]
            for u, v in zip(c, c[1:]):
                self.succ[u] = v
                self.pred[v] = u

    def find(self, v):
        root = v
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[v] != root:
            self.parent[v], v = root, self.parent[v]
        return root

    def try_link(self, u, v) -> bool:
        if u in self.succ or v in self.pred:
            return False
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return False
        self.succ[u] = v
        self.pred[v] = u
        self.parent[rv] = ru
        return True


def chain_greedy(g: ChainGraph) -> PathCover:
    state = _Chains((v,) for v in g.vertices)
    for (u, v), _ in g.sorted_arcs():
        state.try_link(u, v)
    return _make_cover(state.succ, g.vertices, g.arcs)


def augment(cover: PathCover, g: ChainGraph) -> PathCover:
    """Greedily link chain tails to chain heads with the remaining arcs."""
    state = _Chains(cover.chains)
    for (u, v), _ in g.sorted_arcs():
        if u in state.parent and v in state.parent and state.succ.get(u) != v:
            state.try_link(u, v)
    return _make_cover(state.succ, state.parent, g.arcs)


def max_cycle_cover(g: ChainGraph) -> dict:
    """Successor map of a maximum-weight cycle cover (self-pairs allowed)."""
    verts = sorted(g.vertices)
    index = {v: i for i, v in enumerate(verts)}
    n = len(verts)
    weights = np.zeros((n, n), dtype=np.int64)
    for (u, v), w in g.arcs.items():
        weights[index[u], index[v]] = w
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return {verts[r]: verts[c] for r, c in zip(rows, cols)}


def chain_cycle_cover(g: ChainGraph) -> PathCover:
    """Half-approximate path cover from a maximum cycle cover.

    Each cycle loses its lightest arc (ties: smallest ``(src, dst)``). Filler
    pairs that are not real arcs are dropped as well, so chains only ever
    join vertices through existing arcs.
    """
    if not g.vertices:
        return PathCover([], 0)
    cyc = max_cycle_cover(g)
    succ = {}
    seen = set()
    for start in sorted(cyc):
        if start in seen:
            continue
        cycle = []
        v = start
        while v not in seen:
            seen.add(v)
            cycle.append((v, cyc[v]))
            v = cyc[v]
        if len(cycle) == 1:
            continue
        lightest = min(cycle, key=lambda a: (g.arcs.get(a, 0), a))
        for a in cycle:
            if a != lightest and a in g.arcs:
                succ[a[0]] = a[1]
    return _make_cover(succ, g.vertices, g.arcs)


def chain_function(g: ChainGraph, mode: ChainingMode = ChainingMode.Combined,
                   max_assignment_blocks: int = DEFAULT_MAX_ASSIGNMENT_BLOCKS) -> PathCover:
    """Chain one function's intra-procedural subgraph."""
    greedy = augment(chain_greedy(g), g)
    if mode is ChainingMode.Greedy or len(g.vertices) > max_assignment_blocks:
        return greedy
    approx = augment(chain_cycle_cover(g), g)
    if mode is ChainingMode.CycleCover:
        return approx
    return greedy if greedy.covered_weight > approx.covered_weight else approx


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("STITCHKIT_THREADS", "1")))
    except ValueError:
        return 1


def chain_combined(per_function: Mapping[Hashable, ChainGraph], tail_call_arcs: Mapping | None = None,
                   mode: ChainingMode = ChainingMode.Combined,
                   max_assignment_blocks: int = DEFAULT_MAX_ASSIGNMENT_BLOCKS) -> PathCover:
    """Per-function chaining followed by tail-call stitching across functions."""
    keys = sorted(per_function)

    def run(key):
        return chain_function(per_function[key], mode, max_assignment_blocks)

    workers = worker_count()
    if workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(workers) as pool:
            covers = list(pool.map(run, keys))
    else:
        covers = [run(k) for k in keys]

    chains = [c for cover in covers for c in cover.chains]
    all_arcs = {}
    for g in per_function.values():
        all_arcs.update(g.arcs)
    merged = PathCover(chains, sum(c.covered_weight for c in covers))
    if tail_call_arcs:
        present = set(merged.vertices())
        tails = {a: w for a, w in tail_call_arcs.items() if a[0] in present and a[1] in present}
        stitched = augment(merged, ChainGraph(set(), dict(tails)))
        for a, w in tails.items():
            all_arcs[a] = all_arcs.get(a, 0) + w
        chains = sorted(stitched.chains)
        merged = PathCover(chains, cover_weight(chains, all_arcs))
    else:
        merged.chains.sort()
    return merged


# --------------------------------------------------------------------------
# from a profile


_CHAIN_BREAKERS = frozenset({Terminator.Return, Terminator.IndirectJump})


def build_chain_graphs(icfg: WeightedICFG) -> tuple[dict, dict]:
    """Chaining-eligible arcs of ``icfg``.

    Returns per-function :class:`ChainGraph` objects (every block is a
    vertex) and the tail-call arcs used for post-hoc stitching. Regular
    calls and returns never become chain adjacencies; self-loops are dropped.
    """
    per_function: dict = {}
    for fn, blocks in icfg.functions.items():
        per_function[fn] = ChainGraph(set(blocks), {})
    tails: dict = {}
    for (src, dst, kind), count in icfg.edges.items():
        if src == dst:
            continue
        if icfg.blocks[src].terminator in _CHAIN_BREAKERS:
            continue
        if kind is EdgeKind.TailCall:
            tails[src, dst] = tails.get((src, dst), 0) + count
        elif kind in INTRA_KINDS:
            arcs = per_function[src.function].arcs
            arcs[src, dst] = arcs.get((src, dst), 0) + count
    return per_function, tails


def chain_icfg(icfg: WeightedICFG, mode: ChainingMode = ChainingMode.Combined,
               max_assignment_blocks: int = DEFAULT_MAX_ASSIGNMENT_BLOCKS) -> PathCover:
    per_function, tails = build_chain_graphs(icfg)
    return chain_combined(per_function, tails, mode, max_assignment_blocks)


def chain_arcs(icfg: WeightedICFG) -> dict:
    per_function, tails = build_chain_graphs(icfg)
    arcs = dict(tails)
    for g in per_function.values():
        for a, w in g.arcs.items():
            arcs[a] = arcs.get(a, 0) + w
    return arcs


def format_chains(cover: PathCover, arcs: Mapping) -> str:
    lines = []
    for c in cover.chains:
        w = cover_weight([c], arcs)
        lines.append("C " + " ".join([str(w)] + [b.hex() for b in c]))
    return "\n".join(lines) + "\n"
