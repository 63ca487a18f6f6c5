"""Seeded synthetic programs, their execution traces, and the canonical fixture.

A synthetic program is a layered call graph (layer ``k`` calls only layer
``k + 1``), so every invocation of ``main`` terminates. Executing it yields a
block trace plus the list of taken/fall-through transfers, from which the
profile, LBR records and block map are derived.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .icfg import (
    BasicBlockInfo, BlockId, BlockMap, EdgeKind, LbrSample, MappedBlock, Terminator, WeightedICFG,
)

MODULE_TAG = 0x0001


# --------------------------------------------------------------------------
# the two-path example


FIGURE2_NAMES = ("M", "A0", "A1", "A2", "B", "C")


def figure2_ids() -> dict[str, BlockId]:
    return {
        "M": BlockId(MODULE_TAG, 1, 0),
        "A0": BlockId(MODULE_TAG, 2, 0),
        "A1": BlockId(MODULE_TAG, 2, 1),
        "A2": BlockId(MODULE_TAG, 2, 2),
        "B": BlockId(MODULE_TAG, 3, 0),
        "C": BlockId(MODULE_TAG, 4, 0),
    }


def figure2_icfg(block_size: int = 16) -> WeightedICFG:
    """M calls A 100 times; A0 branches to A1 (80) or A2 (20); A1 calls B, A2 calls C."""
    ids = figure2_ids()
    rows = [
        ("M", 100, Terminator.FallthroughOnly),
        ("A0", 100, Terminator.CondBranch),
        ("A1", 80, Terminator.FallthroughOnly),
        ("A2", 20, Terminator.FallthroughOnly),
        ("B", 80, Terminator.Return),
        ("C", 20, Terminator.Return),
    ]
    g = WeightedICFG()
    for k, (name, count, term) in enumerate(rows):
        g.add_block(BasicBlockInfo(ids[name], block_size, count, term, k * block_size))
    g.add_edge(ids["M"], ids["A0"], EdgeKind.Call, 100)
    g.add_edge(ids["A0"], ids["A1"], EdgeKind.CondTaken, 80)
    g.add_edge(ids["A0"], ids["A2"], EdgeKind.Fallthrough, 20)
    g.add_edge(ids["A1"], ids["B"], EdgeKind.Call, 80)
    g.add_edge(ids["A2"], ids["C"], EdgeKind.Call, 20)
    return g


# --------------------------------------------------------------------------
# random programs


@dataclass
class Behavior:
    """What a block does when it finishes executing."""

    op: str  # cond | jump | call | tail | fall | ret
    target: int | None = None  # block index (cond/jump) or function number (call/tail)
    p_taken: float = 0.0


@dataclass
class SyntheticProgram:
    blocks: list[list[BasicBlockInfo]]  # per function, in address order
    behavior: list[list[Behavior]]
    layers: list[list[int]]

    @property
    def num_functions(self) -> int:
        return len(self.blocks)

    def block_id(self, fn: int, idx: int) -> BlockId:
        return self.blocks[fn][idx].id

    def all_blocks(self) -> list[BasicBlockInfo]:
        return [b for fn in self.blocks for b in fn]

    def block_map(self) -> BlockMap:
        return BlockMap(MappedBlock(b.orig_address, b.byte_size, b.id, b.terminator) for b in self.all_blocks())


@dataclass
class Execution:
    trace: list[BlockId]
    transfers: list[tuple[BlockId, BlockId, EdgeKind]]
    continuations: dict = field(default_factory=dict)  # (call block, return site) -> count


def generate_program(seed: int = 0, num_functions: int = 120, skew: float = 0.5, max_blocks: int = 16,
                     layers: int = 5) -> SyntheticProgram:
    """Random layered program; ``skew`` in [0, 1] biases branches and callees."""
    rng = np.random.default_rng(seed)
    num_functions = max(num_functions, 2)
    # main alone in layer 0, the rest split geometrically
    weights = np.array([2.0 ** k for k in range(1, layers)])
    counts = np.maximum(1, np.floor(weights / weights.sum() * (num_functions - 1))).astype(int)
    counts[-1] += num_functions - 1 - counts.sum()
    layer_of, layer_list, next_fn = [0], [[0]], 1
    for k, c in enumerate(counts, 1):
        layer_list.append(list(range(next_fn, next_fn + c)))
        layer_of.extend([k] * c)
        next_fn += c

    def biased_p():
        p = rng.uniform() ** (1 + 6 * skew)
        return p if rng.uniform() < 0.5 else 1 - p

    def pick_callee(layer: int) -> int:
        pool = layer_list[layer + 1]
        ranks = np.arange(1, len(pool) + 1, dtype=float) ** -(0.5 + 1.5 * skew)
        perm = rng.permutation(len(pool))
        return pool[perm[rng.choice(len(pool), p=ranks / ranks.sum())]]

    blocks, behavior = [], []
    address = 0
    for fn in range(num_functions):
        leaf = layer_of[fn] == layers - 1
        fb, fbeh = [], []
        if fn == 0:
            # main: a dispatcher that conditionally calls each layer-1 function
            plan = []
            for callee in layer_list[1][:16]:
                plan.append(None)
                plan.append(Behavior("call", callee))
            for i in range(0, len(plan), 2):
                plan[i] = Behavior("cond", i + 2, float(rng.uniform(0.1, 0.9)))
            plan.append(Behavior("ret"))
            n = len(plan)
        else:
            n = int(rng.integers(3, max_blocks + 1))
        for i in range(n):
            if fn == 0:
                beh = plan[i]
            elif i == n - 1:
                beh = Behavior("ret")
            else:
                r = rng.uniform()
                if r < 0.35:
                    if rng.uniform() < 0.15:
                        beh = Behavior("cond", int(rng.integers(0, i + 1)), min(biased_p(), 0.7))
                    elif i + 2 <= n - 1:
                        beh = Behavior("cond", int(rng.integers(i + 2, n)), biased_p())
                    else:
                        beh = Behavior("fall")
                elif r < 0.62 and not leaf:
                    beh = Behavior("call", pick_callee(layer_of[fn]))
                elif r < 0.72 and i + 2 <= n - 1:
                    beh = Behavior("jump", int(rng.integers(i + 2, n)))
                elif r < 0.76 and not leaf:
                    beh = Behavior("tail", pick_callee(layer_of[fn]))
                else:
                    beh = Behavior("fall")
            term = {
                "cond": Terminator.CondBranch, "jump": Terminator.UncondJump, "tail": Terminator.TailCall,
                "ret": Terminator.Return,
            }.get(beh.op, Terminator.FallthroughOnly)
            size = 4 * int(rng.integers(2, 25))
            fb.append(BasicBlockInfo(BlockId(MODULE_TAG, fn, i), size, 0, term, address))
            fbeh.append(beh)
            address += size
        blocks.append(fb)
        behavior.append(fbeh)
    return SyntheticProgram(blocks, behavior, layer_list)


def execute(program: SyntheticProgram, length: int = 20000, seed: int = 0) -> Execution:
    """Run ``main`` repeatedly until the trace holds ``length`` blocks."""
    rng = np.random.default_rng(seed)
    trace, transfers = [], []
    continuations: dict = defaultdict(int)
    stack: list[tuple[int, int, int]] = []  # (fn, return block, call block)
    fn, idx = 0, 0
    while len(trace) < length:
        here = program.block_id(fn, idx)
        trace.append(here)
        beh = program.behavior[fn][idx]
        if beh.op == "ret":
            if stack:
                fn, idx, caller = stack.pop()
                continuations[program.block_id(fn, caller), program.block_id(fn, idx)] += 1
            else:
                # the driver loop re-enters main
                fn, idx = 0, 0
            kind = EdgeKind.Return
        elif beh.op == "call":
            stack.append((fn, idx + 1, idx))
            fn, idx, kind = beh.target, 0, EdgeKind.Call
        elif beh.op == "tail":
            fn, idx, kind = beh.target, 0, EdgeKind.TailCall
        elif beh.op == "jump":
            idx, kind = beh.target, EdgeKind.UncondJump
        elif beh.op == "cond" and rng.uniform() < beh.p_taken:
            idx, kind = beh.target, EdgeKind.CondTaken
        else:
            idx, kind = idx + 1, EdgeKind.Fallthrough
        if len(trace) < length:
            transfers.append((here, program.block_id(fn, idx), kind))
    return Execution(trace, transfers, dict(continuations))


def execution_profile(program: SyntheticProgram, run: Execution, continuations: bool = True) -> WeightedICFG:
    """Exact edge profile of ``run``.

    With ``continuations``, each call site also gets a fall-through edge to
    its return site, as an instrumenting profiler that resets the previous
    block at the call site would record.
    """
    execs: dict = defaultdict(int)
    for b in run.trace:
        execs[b] += 1
    g = WeightedICFG()
    for b in program.all_blocks():
        g.add_block(BasicBlockInfo(b.id, b.byte_size, execs.get(b.id, 0), b.terminator, b.orig_address))
    counts: dict = defaultdict(int)
    for t in run.transfers:
        counts[t] += 1
    if continuations:
        for (src, dst), c in run.continuations.items():
            counts[src, dst, EdgeKind.Fallthrough] += c
    for (src, dst, kind), c in sorted(counts.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)):
        g.add_edge(src, dst, kind, c)
    return g


def lbr_records(program: SyntheticProgram, run: Execution) -> tuple[list[tuple[int, int]], list[int]]:
    """Branch records for every non-fall-through transfer, with their trace positions."""
    where = {b.id: b for b in program.all_blocks()}
    records, positions = [], []
    for t, (src, dst, kind) in enumerate(run.transfers):
        if kind is EdgeKind.Fallthrough:
            continue
        s = where[src]
        records.append((s.orig_address + s.byte_size - 1, where[dst].orig_address))
        positions.append(t)
    return records, positions


def lbr_samples(records: list[tuple[int, int]], depth: int | None = 32) -> list[LbrSample]:
    """Split records into consecutive, non-overlapping samples of ``depth``.

    ``depth=None`` keeps the whole stream in one exhaustive sample.
    """
    if depth is None:
        return [LbrSample(tuple(records))] if records else []
    if depth < 1:
        raise ValueError("LBR depth must be positive")
    return [LbrSample(tuple(records[k:k + depth])) for k in range(0, len(records), depth)]


def random_layout_order(program: SyntheticProgram, seed: int = 0) -> SyntheticProgram:
    """Same program with functions placed at shuffled addresses."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(program.num_functions)
    address = 0
    new_blocks = [None] * program.num_functions
    for fn in order:
        fb = []
        for b in program.blocks[fn]:
            fb.append(BasicBlockInfo(b.id, b.byte_size, b.exec_count, b.terminator, address))
            address += b.byte_size
        new_blocks[fn] = fb
    return SyntheticProgram(new_blocks, program.behavior, program.layers)
