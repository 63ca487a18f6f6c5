import pytest

from stitchkit.icfg import BasicBlockInfo, BlockId, EdgeKind, Terminator, WeightedICFG, format_profile
from stitchkit.synthetic import figure2_icfg, figure2_ids


@pytest.fixture
def fig2():
    return figure2_icfg()


@pytest.fixture
def ids():
    return figure2_ids()


@pytest.fixture
def fig2_file(tmp_path, fig2):
    path = tmp_path / "fig2.cfgprof"
    path.write_text(format_profile(fig2))
    return path


def make_icfg(blocks, edges):
    """Tiny graph builder: ``blocks`` is {name: (fn, idx, size, count, term)}."""
    g = WeightedICFG()
    ids = {}
    for addr, (name, (fn, idx, size, count, term)) in enumerate(blocks.items()):
        ids[name] = BlockId(1, fn, idx)
        g.add_block(BasicBlockInfo(ids[name], size, count, term, addr * 64))
    for src, dst, kind, count in edges:
        g.add_edge(ids[src], ids[dst], kind, count)
    return g, ids


__all__ = ["make_icfg", "EdgeKind", "Terminator"]
