"""Reference layouts: original order, Pettis-Hansen (function and BB level), C3."""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction

from .chaining import build_chain_graphs, chain_greedy
from .collocation import Layout
from .icfg import EdgeKind, WeightedICFG, split_hot_cold

_CALL_KINDS = (EdgeKind.Call, EdgeKind.TailCall)


def _layout(order, icfg: WeightedICFG, hot_count: int = 0) -> Layout:
    return Layout(list(order), {b: icfg.blocks[b].byte_size for b in order}, hot_count)


def baseline_original(icfg: WeightedICFG) -> Layout:
    return _layout(icfg.original_order(), icfg)


def call_weights(icfg: WeightedICFG) -> dict[tuple, int]:
    """Caller function -> callee function call counts (cross-function only)."""
    calls: dict = defaultdict(int)
    for (src, dst, kind), count in icfg.edges.items():
        if kind in _CALL_KINDS and src.function != dst.function:
            calls[src.function, dst.function] += count
    return dict(calls)


def _density(blocks, icfg: WeightedICFG) -> Fraction:
    size = sum(icfg.blocks[b].byte_size for b in blocks)
    return Fraction(sum(icfg.blocks[b].exec_count for b in blocks), size)


def _ph_order(units: dict, icfg: WeightedICFG) -> list:
    """Pettis-Hansen merging of ``units`` (function key -> block list).

    Heaviest call pair first; of the four orientations, keep the one with
    the most calls between the two functions that end up adjacent. Ties keep
    the earlier candidate (caller cluster first, unreversed).
    """
    calls = call_weights(icfg)
    pair_weight: dict = defaultdict(int)
    for (a, b), w in calls.items():
        if a in units and b in units:
            pair_weight[min(a, b), max(a, b)] += w

    def between(f, g):
        return pair_weight.get((min(f, g), max(f, g)), 0)

    cluster_of = {f: f for f in units}
    clusters = {f: [f] for f in units}
    for (a, b), _ in sorted(pair_weight.items(), key=lambda kv: (-kv[1], kv[0])):
        ca, cb = cluster_of[a], cluster_of[b]
        if ca == cb:
            continue
        x, y = clusters[ca], clusters[cb]
        candidates = [x + y, x + y[::-1], x[::-1] + y, x[::-1] + y[::-1]]
        scores = [between(c[len(x) - 1], c[len(x)]) for c in candidates]
        merged = candidates[scores.index(max(scores))]
        del clusters[cb]
        clusters[ca] = merged
        for f in merged:
            cluster_of[f] = ca

    def key(item):
        _, fns = item
        blocks = [b for f in fns for b in units[f]]
        return (-_density(blocks, icfg), icfg.original_key(units[fns[0]][0]))

    ordered = sorted(clusters.items(), key=key)
    return [b for _, fns in ordered for f in fns for b in units[f]]


def baseline_ph_functions(icfg: WeightedICFG) -> Layout:
    """Pettis-Hansen function reordering; blocks keep original order."""
    units = dict(icfg.functions)
    return _layout(_ph_order(units, icfg), icfg)


def _coalesce(chains: list[tuple], icfg: WeightedICFG) -> list:
    """Chains of one function: the entry chain first, then by density."""
    def key(c):
        return (not any(b.is_entry for b in c), -_density(c, icfg), c[0])

    return [b for c in sorted(chains, key=key) for b in c]


def baseline_ph_bb(icfg: WeightedICFG, hot_threshold: int = 1) -> Layout:
    """Pettis-Hansen with function splitting and greedy block chaining."""
    hot, cold = split_hot_cold(icfg, hot_threshold)
    per_function, _ = build_chain_graphs(hot)
    units = {}
    for fn, g in per_function.items():
        if g.vertices:
            units[fn] = _coalesce(chain_greedy(g).chains, icfg)
    order = _ph_order(units, icfg)
    return _layout(order + cold, icfg, len(order))


def baseline_c3(icfg: WeightedICFG, size_cap: int = 4096, hotness: str = "calls") -> Layout:
    """Call-chain clustering: callees are appended to their hottest caller's cluster."""
    units = dict(icfg.functions)
    calls = call_weights(icfg)
    incoming: dict = defaultdict(int)
    callers: dict = defaultdict(dict)
    for (a, b), w in calls.items():
        incoming[b] += w
        callers[b][a] = w
    size = {f: sum(icfg.blocks[b].byte_size for b in blocks) for f, blocks in units.items()}
    samples = {f: sum(icfg.blocks[b].exec_count for b in blocks) for f, blocks in units.items()}
    if hotness == "calls":
        heat = incoming
    elif hotness == "samples":
        heat = samples
    else:
        raise ValueError(f"unknown hotness metric {hotness!r}")

    cluster_of = {f: f for f in units}
    clusters = {f: [f] for f in units}
    csize = dict(size)
    for f in sorted(units, key=lambda f: (-heat.get(f, 0), f)):
        if not callers.get(f):
            continue
        caller = min(callers[f], key=lambda c: (-callers[f][c], c))
        cp, cf = cluster_of[caller], cluster_of[f]
        if cp == cf or csize[cp] + csize[cf] > size_cap:
            continue
        clusters[cp].extend(clusters.pop(cf))
        csize[cp] += csize.pop(cf)
        for g in clusters[cp]:
            cluster_of[g] = cp

    def key(item):
        c, fns = item
        blocks = [b for f in fns for b in units[f]]
        return (-_density(blocks, icfg), icfg.original_key(units[c][0]))

    ordered = sorted(clusters.items(), key=key)
    return _layout([b for _, fns in ordered for f in fns for b in units[f]], icfg)
