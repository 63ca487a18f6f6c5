"""Estimator-style front end for the layout algorithms.

Every strategy follows the same protocol: ``fit(icfg)`` computes a layout
and stores it as ``layout_``; ``transform(blocks)`` maps block ids to their
byte offsets; ``score(icfg)`` reports the fraction of transfers that land
within a page. Hyper-parameters live on ``__init__`` so ``get_params`` /
``set_params`` / ``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_icfg, check_non_negative_int, parse_levels
from .baselines import baseline_c3, baseline_original, baseline_ph_bb, baseline_ph_functions
from .chaining import DEFAULT_MAX_ASSIGNMENT_BLOCKS, ChainingMode, chain_icfg
from .collocation import DEFAULT_LEVELS, audit_order, finalize, hierarchical_layout, partial_order
from .evaluation import UnknownBlock, count_d_close
from .icfg import WeightedICFG, split_hot_cold


class LayoutMixin:
    """Shared ``transform`` / ``fit_transform`` / ``score`` for layout estimators."""

    def fit_transform(self, X, y=None):
        return self.fit(X, y).layout_

    def transform(self, X):
        check_is_fitted(self, "layout_")
        blocks = list(X.blocks) if isinstance(X, WeightedICFG) else list(X)
        missing = [b for b in blocks if b not in self.layout_]
        if missing:
            raise UnknownBlock(missing)
        return np.array([self.layout_.offsets[b] for b in blocks], dtype=np.int64)

    def score(self, X, y=None, d: int = 4096) -> float:
        check_is_fitted(self, "layout_")
        icfg = check_icfg(X)
        total = icfg.total_weight()
        return count_d_close(self.layout_, icfg, d) / total if total else 1.0


class CodeStitcher(LayoutMixin, BaseEstimator):
    """Inter-procedural basic block layout.

    Chains the hot blocks, optionally derives a branch-prediction partial
    order between chains, collocates chains level by level, and finalizes by
    execution density with cold blocks at the end.

    Fitted attributes: ``hot_icfg_``, ``cold_blocks_``, ``chains_``,
    ``chain_order_`` (None unless ``partial_order``), ``partial_layout_``,
    ``layout_``.
    """

    def __init__(self, distance_levels=DEFAULT_LEVELS, hot_threshold=1, chaining="combined",
                 partial_order=False, min_bpp=0, max_assignment_blocks=DEFAULT_MAX_ASSIGNMENT_BLOCKS):
        self.distance_levels = distance_levels
        self.hot_threshold = hot_threshold
        self.chaining = chaining
        self.partial_order = partial_order
        self.min_bpp = min_bpp
        self.max_assignment_blocks = max_assignment_blocks

    def fit(self, X, y=None):
        icfg = check_icfg(X)
        levels = parse_levels(self.distance_levels)
        mode = ChainingMode(self.chaining)
        check_non_negative_int(self.hot_threshold, "hot_threshold")
        check_non_negative_int(self.min_bpp, "min_bpp")

        hot, cold = split_hot_cold(icfg, self.hot_threshold)
        self.hot_icfg_ = hot
        self.cold_blocks_ = cold
        self.chains_ = chain_icfg(hot, mode, self.max_assignment_blocks)
        self.chain_order_ = partial_order(self.chains_, hot, self.min_bpp) if self.partial_order else None
        self.partial_layout_ = hierarchical_layout(self.chains_, levels, hot, self.chain_order_)
        self.layout_ = finalize(self.partial_layout_, cold, icfg, self.chain_order_)
        return self

    def order_violations(self):
        check_is_fitted(self, "layout_")
        if self.chain_order_ is None:
            return []
        return audit_order(self.layout_, self.chain_order_)


class OriginalOrder(LayoutMixin, BaseEstimator):
    def fit(self, X, y=None):
        self.layout_ = baseline_original(check_icfg(X))
        return self


class PettisHansen(LayoutMixin, BaseEstimator):
    """Function-granularity Pettis-Hansen reordering."""

    def fit(self, X, y=None):
        self.layout_ = baseline_ph_functions(check_icfg(X))
        return self


class PettisHansenBB(LayoutMixin, BaseEstimator):
    """Pettis-Hansen with hot/cold splitting and basic block chaining."""

    def __init__(self, hot_threshold=1):
        self.hot_threshold = hot_threshold

    def fit(self, X, y=None):
        check_non_negative_int(self.hot_threshold, "hot_threshold")
        self.layout_ = baseline_ph_bb(check_icfg(X), self.hot_threshold)
        return self


class CallChainClustering(LayoutMixin, BaseEstimator):
    """C3 function placement."""

    def __init__(self, size_cap=4096, hotness="calls"):
        self.size_cap = size_cap
        self.hotness = hotness

    def fit(self, X, y=None):
        self.layout_ = baseline_c3(check_icfg(X), self.size_cap, self.hotness)
        return self


STRATEGIES = ("cs", "cs-po", "ph", "ph-bb", "c3", "original")


def make_strategy(name: str, config=None):
    """Estimator for a strategy name, parameterised from a ``PipelineConfig``."""
    from .config import PipelineConfig

    cfg = config or PipelineConfig()
    if name in ("cs", "cs-po"):
        return CodeStitcher(
            distance_levels=cfg.distance_levels,
            hot_threshold=cfg.hot_threshold,
            chaining=cfg.chaining_mode,
            partial_order=(name == "cs-po") or (name == "cs" and cfg.enable_partial_order),
            min_bpp=cfg.min_bpp,
            max_assignment_blocks=cfg.max_assignment_blocks,
        )
    if name == "ph":
        return PettisHansen()
    if name == "ph-bb":
        return PettisHansenBB(hot_threshold=cfg.hot_threshold)
    if name == "c3":
        return CallChainClustering(size_cap=cfg.c3_size_cap, hotness=cfg.c3_hotness)
    if name == "original":
        return OriginalOrder()
    raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
