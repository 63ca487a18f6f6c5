"""Profile-guided inter-procedural basic block layout."""

from .chaining import ChainGraph, ChainingMode, PathCover, augment, chain_combined, chain_cycle_cover, chain_greedy
from .collocation import (
    DEFAULT_LEVELS, ChainOrder, Layout, PartialLayout, compute_bd, compute_bpp, edge_weight, finalize,
    hierarchical_layout, partial_order, positions, solve_level,
)
from .config import PipelineConfig
from .estimators import CallChainClustering, CodeStitcher, OriginalOrder, PettisHansen, PettisHansenBB
from .evaluation import CacheConfig, LayoutMetrics, TlbConfig, count_d_close, evaluate, replay_tlb, replay_trace
from .baselines import baseline_c3, baseline_ph_bb, baseline_ph_functions
from .icfg import (
    BasicBlockInfo, BlockId, EdgeKind, LbrSample, Terminator, TransferEdge, WeightedICFG, hot_subgraph,
    ingest_lbr, load_profile, save_profile,
)

__version__ = "0.1.0"

__all__ = [
    "BasicBlockInfo", "BlockId", "CacheConfig", "CallChainClustering", "ChainGraph", "ChainOrder", "ChainingMode",
    "CodeStitcher", "DEFAULT_LEVELS", "EdgeKind", "Layout", "LayoutMetrics", "LbrSample", "OriginalOrder",
    "PartialLayout", "PathCover", "PettisHansen", "PettisHansenBB", "PipelineConfig", "Terminator", "TlbConfig",
    "TransferEdge", "WeightedICFG", "augment", "baseline_c3", "baseline_ph_bb", "baseline_ph_functions",
    "chain_combined", "chain_cycle_cover", "chain_greedy", "compute_bd", "compute_bpp", "count_d_close",
    "edge_weight", "evaluate", "finalize", "hierarchical_layout", "hot_subgraph", "ingest_lbr", "load_profile",
    "partial_order", "positions", "replay_tlb", "replay_trace", "save_profile", "solve_level",
]
