import random

import pytest

from conftest import make_icfg
from oracles import is_path_cover, optimal_path_cover, random_arcs, random_icfg
from stitchkit.chaining import (
    ChainGraph, ChainingMode, PathCover, augment, build_chain_graphs, chain_arcs, chain_combined,
    chain_cycle_cover, chain_function, chain_greedy, chain_icfg, cover_weight, format_chains,
)
from stitchkit.icfg import EdgeKind, Terminator

ABC = {("a", "b"): 5, ("b", "c"): 4, ("a", "c"): 3}


def graph(arcs, extra=()):
    return ChainGraph(set(extra), dict(arcs))


def test_greedy_three_vertices():
    cover = chain_greedy(graph(ABC))
    assert cover.chains == [("a", "b", "c")]
    assert cover.covered_weight == 9


def test_greedy_rejects_cycle():
    cover = chain_greedy(graph({("a", "b"): 5, ("b", "a"): 4}))
    assert cover.chains == [("a", "b")] and cover.covered_weight == 5


def test_greedy_no_arcs():
    cover = chain_greedy(ChainGraph({"x", "y"}, {}))
    assert cover.chains == [("x",), ("y",)] and cover.covered_weight == 0


def test_greedy_tie_break_is_lexicographic():
    # both a->c and b->c weigh 5; (a, c) sorts first and wins the head of c
    cover = chain_greedy(graph({("a", "c"): 5, ("b", "c"): 5}))
    assert ("a", "c") in cover.chains


def test_cycle_cover_two_cycle():
    cover = chain_cycle_cover(graph({("a", "b"): 5, ("b", "a"): 4}))
    assert cover.chains == [("a", "b")] and cover.covered_weight == 5


def test_cycle_cover_three_vertices():
    cover = chain_cycle_cover(graph(ABC))
    assert cover.chains == [("a", "b", "c")] and cover.covered_weight == 9


def test_cycle_cover_single_vertex():
    cover = chain_cycle_cover(ChainGraph({"v"}, {}))
    assert cover.chains == [("v",)] and cover.covered_weight == 0


def test_cycle_cover_empty_graph():
    assert chain_cycle_cover(ChainGraph()).chains == []


def test_self_loops_removed():
    g = graph({("a", "a"): 50, ("a", "b"): 1})
    assert ("a", "a") not in g.arcs
    assert chain_cycle_cover(g).chains == [("a", "b")]


def test_augment_links_tail_to_head():
    g = graph({("a", "b"): 5, ("b", "c"): 2})
    cover = augment(PathCover([("a", "b"), ("c",)], 5), g)
    assert cover.chains == [("a", "b", "c")] and cover.covered_weight == 7


def test_augment_fixpoint():
    g = graph(ABC)
    cover = chain_greedy(g)
    assert augment(cover, g) == cover


@pytest.mark.parametrize("seed", range(60))
def test_cycle_cover_half_approximation(seed):
    rng = random.Random(seed)
    vertices, arcs = random_arcs(rng, rng.randint(1, 8))
    g = ChainGraph(set(vertices), arcs)
    opt = optimal_path_cover(vertices, arcs)
    for cover in (chain_cycle_cover(g), chain_greedy(g), chain_function(g)):
        assert is_path_cover(cover.chains, vertices, arcs)
        assert cover.covered_weight == cover_weight(cover.chains, arcs)
        assert cover.covered_weight <= opt
    assert 2 * chain_cycle_cover(g).covered_weight >= opt


@pytest.mark.parametrize("seed", range(60))
def test_augment_monotone_idempotent(seed):
    rng = random.Random(1000 + seed)
    vertices, arcs = random_arcs(rng, rng.randint(1, 8))
    g = ChainGraph(set(vertices), arcs)
    for base in (chain_cycle_cover(g), chain_greedy(g)):
        once = augment(base, g)
        assert once.covered_weight >= base.covered_weight
        assert augment(once, g) == once


@pytest.mark.parametrize("seed", range(60))
def test_combined_dominates(seed):
    rng = random.Random(2000 + seed)
    vertices, arcs = random_arcs(rng, 8, p=rng.uniform(0.1, 0.6))
    g = ChainGraph(set(vertices), arcs)
    greedy = chain_function(g, ChainingMode.Greedy).covered_weight
    approx = chain_function(g, ChainingMode.CycleCover).covered_weight
    assert chain_function(g).covered_weight == max(greedy, approx)


def test_combined_prefers_cycle_cover_on_tie():
    g = graph(ABC)
    assert chain_function(g) == augment(chain_cycle_cover(g), g)


def test_large_function_falls_back_to_greedy():
    rng = random.Random(5)
    vertices, arcs = random_arcs(rng, 8)
    g = ChainGraph(set(vertices), arcs)
    assert chain_function(g, max_assignment_blocks=4) == augment(chain_greedy(g), g)


def test_tail_call_stitching():
    f = ChainGraph({("f", 0)}, {})
    g = ChainGraph({("g", 0)}, {})
    cover = chain_combined({"f": f, "g": g}, {(("f", 0), ("g", 0)): 50})
    assert cover.chains == [(("f", 0), ("g", 0))]
    assert cover.covered_weight == 50


def test_two_functions_methods_agree():
    fa = graph({("a", "b"): 5, ("b", "c"): 4})
    fb = graph({("x", "y"): 3})
    cover = chain_combined({1: fa, 2: fb})
    assert cover.chains == [("a", "b", "c"), ("x", "y")]
    assert cover.covered_weight == 12


def test_threads_give_same_answer(monkeypatch):
    g = random_icfg(random.Random(9), functions=6)
    single = chain_icfg(g)
    monkeypatch.setenv("STITCHKIT_THREADS", "4")
    assert chain_icfg(g) == single


def test_chain_graph_eligibility():
    g, ids = make_icfg({
        "m": (1, 0, 8, 10, Terminator.FallthroughOnly),
        "r": (1, 1, 8, 10, Terminator.Return),
        "j": (1, 2, 8, 10, Terminator.IndirectJump),
        "k": (1, 3, 8, 10, Terminator.TailCall),
        "f": (2, 0, 8, 10, Terminator.Return),
    }, [
        ("m", "f", EdgeKind.Call, 10),
        ("f", "r", EdgeKind.Return, 10),
        ("r", "m", EdgeKind.UncondJump, 5),  # cannot continue past a return
        ("j", "k", EdgeKind.UncondJump, 5),  # nor past an indirect jump
        ("m", "r", EdgeKind.Fallthrough, 7),
        ("k", "f", EdgeKind.TailCall, 9),
        ("m", "m", EdgeKind.CondTaken, 3),
    ])
    per_fn, tails = build_chain_graphs(g)
    assert per_fn[(1, 1)].arcs == {(ids["m"], ids["r"]): 7}
    assert per_fn[(1, 2)].arcs == {}
    assert tails == {(ids["k"], ids["f"]): 9}


@pytest.mark.parametrize("seed", range(25))
def test_chains_never_join_calls(seed):
    g = random_icfg(random.Random(seed), functions=4)
    cover = chain_icfg(g)
    # disjoint cover of every block
    blocks = [b for c in cover.chains for b in c]
    assert sorted(blocks) == sorted(g.blocks)
    eligible = chain_arcs(g)
    for c in cover.chains:
        for u, v in zip(c, c[1:]):
            assert (u, v) in eligible
            assert (u, v, EdgeKind.Call) not in g.edges or (u, v) in eligible
            assert g.blocks[u].terminator not in (Terminator.Return, Terminator.IndirectJump)
    assert cover.covered_weight == cover_weight(cover.chains, eligible)


def test_fig2_chains(fig2, ids):
    cover = chain_icfg(fig2)
    assert (ids["A0"], ids["A1"]) in cover.chains
    assert cover.covered_weight == 80


def test_format_chains(fig2, ids):
    cover = chain_icfg(fig2)
    text = format_chains(cover, chain_arcs(fig2))
    assert f"C 80 {ids['A0'].hex()} {ids['A1'].hex()}" in text.splitlines()
