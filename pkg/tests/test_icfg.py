import random

import pytest
from hypothesis import given, strategies as st

from conftest import make_icfg
from oracles import lbr_ground_truth, random_icfg
from stitchkit import synthetic
from stitchkit.icfg import (
    BasicBlockInfo, BlockId, BlockMap, DanglingEdge, EdgeKind, InvariantViolation, LbrSample, LbrStats,
    MappedBlock, ParseError, Terminator, format_block_map, format_lbr, format_profile,
    hot_subgraph, ingest_lbr, load_profile, parse_block_map, parse_lbr, parse_profile, save_profile,
    split_hot_cold,
)


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFFFFFF), st.integers(0, 0xFFFF))
def test_block_id_packs_losslessly(m, f, b):
    bid = BlockId(m, f, b)
    assert BlockId.unpack(bid.pack()) == bid
    assert BlockId.parse(bid.hex()) == bid
    assert len(bid.hex()) == 16


@given(st.lists(st.integers(0, (1 << 64) - 1), min_size=2, max_size=20))
def test_block_id_sort_matches_packed_order(values):
    ids = [BlockId.unpack(v) for v in values]
    assert [b.pack() for b in sorted(ids)] == sorted(values)


def test_entry_block():
    assert BlockId(1, 2, 0).is_entry
    assert not BlockId(1, 2, 1).is_entry


def test_fig2_profile_loads(fig2_file):
    g = load_profile(fig2_file)
    assert len(g.blocks) == 6
    assert len(g.edges) == 5
    assert g.total_weight() == 300


def test_single_block_no_edges():
    g = parse_profile(["cfgprof v1", "B 0001 00000001 0000 16 5 Return"])
    assert len(g.blocks) == 1 and not g.edges


def test_duplicate_edges_summed():
    a, b = BlockId(1, 1, 0), BlockId(1, 1, 1)
    lines = [
        "cfgprof v1",
        "B 0001 00000001 0000 8 20 CondBranch",
        "B 0001 00000001 0001 8 20 Return",
        f"E {a.hex()} {b.hex()} Fallthrough 10",
        f"E {a.hex()} {b.hex()} Fallthrough 10",
    ]
    g = parse_profile(lines)
    assert g.edges == {(a, b, EdgeKind.Fallthrough): 20}


def test_comments_and_blank_lines():
    g = parse_profile(["# leading", "", "cfgprof v1  # header", "B 0001 00000001 0000 4 0 Return 1f0"])
    assert g.blocks[BlockId(1, 1, 0)].orig_address == 0x1F0


@pytest.mark.parametrize("lines, lineno", [
    (["cfgprof v2"], 1),
    (["cfgprof v1", "B 0001 00000001 0000 16"], 2),
    (["cfgprof v1", "B 0001 00000001 0000 0 1 Return"], 2),
    (["cfgprof v1", "B 0001 00000001 0000 16 1 Bogus"], 2),
    (["cfgprof v1", "X nope"], 2),
    (["cfgprof v1", "B 0001 00000001 0000 16 1 Return", "E zz 00 Call 1"], 3),
])
def test_parse_errors_carry_line(lines, lineno):
    with pytest.raises(ParseError) as exc:
        parse_profile(lines)
    assert exc.value.line == lineno


def test_empty_file_is_parse_error():
    with pytest.raises(ParseError):
        parse_profile([])


def test_dangling_edge():
    a, b = BlockId(1, 1, 0), BlockId(1, 1, 1)
    with pytest.raises(DanglingEdge, match="line 3"):
        parse_profile(["cfgprof v1", "B 0001 00000001 0000 8 1 Return", f"E {a.hex()} {b.hex()} Fallthrough 1"])


def test_call_to_non_entry_rejected():
    a, b = BlockId(1, 1, 0), BlockId(1, 2, 1)
    lines = ["cfgprof v1", "B 0001 00000001 0000 8 1 FallthroughOnly", "B 0001 00000002 0001 8 1 Return",
             f"E {a.hex()} {b.hex()} Call 1"]
    with pytest.raises(InvariantViolation):
        parse_profile(lines)


def test_intra_edge_across_functions_rejected():
    g, ids = make_icfg({"a": (1, 0, 8, 1, Terminator.UncondJump), "b": (2, 1, 8, 1, Terminator.Return)}, [])
    with pytest.raises(InvariantViolation):
        g.add_edge(ids["a"], ids["b"], EdgeKind.UncondJump, 3)


def test_tail_call_may_stay_in_function():
    g, ids = make_icfg({"a": (1, 0, 8, 1, Terminator.CondBranch), "b": (1, 1, 8, 1, Terminator.TailCall)}, [])
    g.add_edge(ids["b"], ids["a"], EdgeKind.TailCall, 3)
    assert g.total_weight() == 3


def test_zero_count_edge_rejected():
    g, ids = make_icfg({"a": (1, 0, 8, 1, Terminator.CondBranch), "b": (1, 1, 8, 1, Terminator.Return)}, [])
    with pytest.raises(InvariantViolation):
        g.add_edge(ids["a"], ids["b"], EdgeKind.Fallthrough, 0)


def test_block_size_must_be_positive():
    with pytest.raises(InvariantViolation):
        BasicBlockInfo(BlockId(1, 1, 0), 0)


@pytest.mark.parametrize("seed", range(20))
def test_save_load_roundtrip(tmp_path, seed):
    g = random_icfg(random.Random(seed))
    path = tmp_path / "g.cfgprof"
    save_profile(g, path)
    back = load_profile(path)
    assert back == g
    assert format_profile(back) == path.read_text()


def test_ingesting_twice_doubles(fig2):
    twice = fig2.merge(fig2)
    for key, count in fig2.edges.items():
        assert twice.edges[key] == 2 * count
    assert twice.total_weight() == 600
    assert all(twice.blocks[b].exec_count == 2 * fig2.blocks[b].exec_count for b in fig2.blocks)


def test_hot_subgraph_threshold_one_keeps_all(fig2):
    assert hot_subgraph(fig2, 1) == fig2


def test_hot_subgraph_threshold_21(fig2, ids):
    hot, cold = split_hot_cold(fig2, 21)
    assert set(hot.blocks) == {ids["M"], ids["A0"], ids["A1"], ids["B"]}
    assert cold == [ids["A2"], ids["C"]]
    # edges touching cold blocks are gone
    assert hot.total_weight() == 100 + 80 + 80


def test_hot_subgraph_threshold_zero_is_identity():
    g = random_icfg(random.Random(3))
    assert hot_subgraph(g, 0) == g


def test_cold_blocks_keep_original_order():
    rng = random.Random(11)
    g = random_icfg(rng, functions=4)
    _, cold = split_hot_cold(g, 50)
    order = g.original_order()
    assert cold == [b for b in order if g.blocks[b].exec_count < 50]


# ---------------------------------------------------------------------------
# LBR


def _four_block_map():
    # X jumps to Y, Y falls into Z, Z jumps to W
    x, y, z, w = (BlockId(1, 1, k) for k in range(4))
    bmap = BlockMap([
        MappedBlock(0x100, 16, x, Terminator.UncondJump),
        MappedBlock(0x200, 16, y, Terminator.FallthroughOnly),
        MappedBlock(0x210, 16, z, Terminator.CondBranch),
        MappedBlock(0x300, 16, w, Terminator.Return),
    ])
    return bmap, (x, y, z, w)


def test_lbr_single_record():
    bmap, (x, y, z, w) = _four_block_map()
    stats = LbrStats()
    g = ingest_lbr([LbrSample(((0x10F, 0x200),))], bmap, stats)
    assert g.edges == {(x, y, EdgeKind.UncondJump): 1}
    assert stats.pairs == 0


def test_lbr_pair_infers_fallthrough():
    bmap, (x, y, z, w) = _four_block_map()
    g = ingest_lbr([LbrSample(((0x10F, 0x200), (0x21F, 0x300)))], bmap)
    assert g.edges == {
        (x, y, EdgeKind.UncondJump): 1,
        (y, z, EdgeKind.Fallthrough): 1,
        (z, w, EdgeKind.CondTaken): 1,
    }
    assert g.blocks[y].exec_count == 1 and g.blocks[z].exec_count == 1


def test_lbr_malformed_and_unmapped_are_counted():
    bmap, (x, y, z, w) = _four_block_map()
    stats = LbrStats()
    samples = [
        LbrSample(((0x10F, 0x210), (0x20F, 0x300))),  # s2 before d1
        LbrSample(((0x999, 0x200),)),  # unmapped source
    ]
    g = ingest_lbr(samples, bmap, stats)
    assert stats.malformed_pairs == 1
    assert stats.unmapped_records == 1
    assert (y, z, EdgeKind.Fallthrough) not in g.edges


def test_lbr_range_with_hole_is_malformed():
    a, b = BlockId(1, 1, 0), BlockId(1, 1, 1)
    bmap = BlockMap([MappedBlock(0, 16, a, Terminator.CondBranch), MappedBlock(32, 16, b, Terminator.CondBranch)])
    stats = LbrStats()
    ingest_lbr([LbrSample(((40, 0), (40, 0)))], bmap, stats)
    assert stats.malformed_pairs == 1


def test_block_map_overlap_rejected():
    with pytest.raises(InvariantViolation):
        BlockMap([MappedBlock(0, 16, BlockId(1, 1, 0)), MappedBlock(8, 16, BlockId(1, 1, 1))])


def test_block_map_and_lbr_text_roundtrip():
    bmap, _ = _four_block_map()
    assert format_block_map(parse_block_map(format_block_map(bmap).splitlines())) == format_block_map(bmap)
    samples = [LbrSample(((0x10F, 0x200), (0x21F, 0x300))), LbrSample(((1, 2),))]
    assert list(parse_lbr(format_lbr(samples).splitlines())) == samples


def test_bad_lbr_token():
    with pytest.raises(ParseError):
        list(parse_lbr(["10->20 garbage"]))


def lbr_roundtrip(seed, functions=30, length=4000):
    program = synthetic.generate_program(seed, functions)
    run = synthetic.execute(program, length, seed + 1)
    records, positions = synthetic.lbr_records(program, run)
    stats = LbrStats()
    g = ingest_lbr(synthetic.lbr_samples(records, None), program.block_map(), stats)
    edges, execs = lbr_ground_truth(run, positions)
    ok = dict(edges) == g.edges and all(g.blocks[b].exec_count == execs.get(b, 0) for b in g.blocks)
    return ok, stats


@pytest.mark.parametrize("seed", range(5))
def test_lbr_roundtrip_exact(seed):
    ok, stats = lbr_roundtrip(seed)
    assert ok
    assert stats.malformed_pairs == stats.unmapped_records == stats.malformed_records == 0


def test_lbr_chunked_samples_undercount_only_boundaries():
    program = synthetic.generate_program(4, 30)
    run = synthetic.execute(program, 3000, 9)
    records, _ = synthetic.lbr_records(program, run)
    whole = ingest_lbr(synthetic.lbr_samples(records, None), program.block_map())
    chunked = ingest_lbr(synthetic.lbr_samples(records, 8), program.block_map())
    for key, count in chunked.edges.items():
        assert count <= whole.edges[key]
    # branch records are never lost, only fall-throughs across sample boundaries
    for key, count in whole.edges.items():
        if key[2] is not EdgeKind.Fallthrough:
            assert chunked.edges[key] == count
