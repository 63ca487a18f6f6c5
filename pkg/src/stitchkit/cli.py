"""``stitchkit`` command line: build, layout, eval, compare, gen-fixture."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synthetic
from ._validation import parse_distance, parse_levels
from .chaining import chain_arcs, format_chains
from .collocation import format_layout, load_layout
from .config import ConfigError, PipelineConfig
from .estimators import STRATEGIES, make_strategy
from .evaluation import UnknownBlock, evaluate, format_comparison, format_metrics, load_trace, save_trace
from .icfg import (
    ICFGError, LbrStats, format_block_map, format_lbr, format_profile, load_lbr, load_profile,
)

log = logging.getLogger("stitchkit")


class CommandError(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    if getattr(args, "levels", None):
        changes["distance_levels"] = parse_levels(args.levels)
    if getattr(args, "chaining", None):
        changes["chaining_mode"] = args.chaining
    if getattr(args, "partial_order", False):
        changes["enable_partial_order"] = True
    if getattr(args, "hot_threshold", None) is not None:
        changes["hot_threshold"] = args.hot_threshold
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_build(args) -> int:
    if args.lbr:
        if not args.block_map:
            raise CommandError("--lbr requires --block-map")
        stats = LbrStats()
        g = load_lbr(args.lbr, args.block_map, stats)
        if stats.malformed_pairs or stats.malformed_records or stats.unmapped_records:
            print(f"stitchkit: skipped {stats.malformed_pairs} malformed pair(s), "
                  f"{stats.malformed_records} malformed record(s), "
                  f"{stats.unmapped_records} unmapped record(s)", file=sys.stderr)
        for extra in args.edges or ():
            g = g.merge(load_profile(extra))
    else:
        if not args.edges:
            raise CommandError("nothing to build: pass --edges or --lbr")
        g = load_profile(args.edges[0])
        for extra in args.edges[1:]:
            g = g.merge(load_profile(extra))
    _write(format_profile(g), args.out)
    if args.out:
        print(f"blocks={len(g.blocks)} edges={len(g.edges)} total_weight={g.total_weight()}")
    return 0


def cmd_layout(args) -> int:
    cfg = _config(args)
    icfg = load_profile(args.profile)
    est = make_strategy("cs", cfg).fit(icfg)
    _write(format_layout(est.layout_), args.out)
    if args.chains_out:
        Path(args.chains_out).write_text(format_chains(est.chains_, chain_arcs(est.hot_icfg_)))
    if args.out:
        metrics = evaluate(est.layout_, icfg, cfg.distance_levels)
        if args.json:
            payload = metrics.as_dict()
            payload["covered_weight"] = est.chains_.covered_weight
            print(json.dumps(payload, sort_keys=True))
        else:
            sys.stdout.write(format_metrics(metrics))
            print(f"covered_weight={est.chains_.covered_weight}")
            print(f"chains={len(est.chains_)} sequences={len(est.partial_layout_.sequences)}")
            if est.chain_order_ is not None:
                print(f"order_constraints={len(est.chain_order_)} order_violations={len(est.order_violations())}")
    return 0


def _distances(args, cfg) -> list:
    ds = list(cfg.distance_levels)
    for d in args.distance or ():
        ds.append(parse_distance(d))
    return ds


def cmd_eval(args) -> int:
    cfg = _config(args)
    layout = load_layout(args.layout)
    icfg = load_profile(args.profile)
    trace = load_trace(args.trace) if args.trace else None
    metrics = evaluate(layout, icfg, _distances(args, cfg), trace, cfg.cache, cfg.tlb)
    if args.json:
        print(metrics.to_json())
    else:
        sys.stdout.write(format_metrics(metrics))
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for name in names:
        if name not in STRATEGIES:
            raise CommandError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
    icfg = load_profile(args.profile)
    trace = load_trace(args.trace) if args.trace else None
    distances = _distances(args, cfg)
    rows = []
    for name in names:
        layout = make_strategy(name, cfg).fit(icfg).layout_
        rows.append((name, evaluate(layout, icfg, distances, trace, cfg.cache, cfg.tlb)))
    if args.json:
        print(json.dumps({name: m.as_dict() for name, m in rows}, sort_keys=True))
    else:
        sys.stdout.write(format_comparison(rows))
    return 0


def cmd_gen_fixture(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.figure2:
        (out / "fig2.cfgprof").write_text(format_profile(synthetic.figure2_icfg(args.block_size)))
        print(f"wrote {out / 'fig2.cfgprof'}")
        return 0
    cfg = _config(args)
    prog_seed, run_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    program = synthetic.generate_program(prog_seed, args.functions, args.skew, layers=args.layers)
    run = synthetic.execute(program, args.trace_length, run_seed)
    prefix = out / args.name
    Path(f"{prefix}.cfgprof").write_text(format_profile(synthetic.execution_profile(program, run)))
    save_trace(run.trace, f"{prefix}.trace")
    Path(f"{prefix}.map").write_text(format_block_map(program.block_map()))
    records, _ = synthetic.lbr_records(program, run)
    Path(f"{prefix}.lbr").write_text(format_lbr(synthetic.lbr_samples(records, args.lbr_depth)))
    print(f"wrote {prefix}.cfgprof {prefix}.trace {prefix}.map {prefix}.lbr "
          f"(functions={program.num_functions} blocks={len(program.all_blocks())} trace={len(run.trace)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stitchkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def pipeline_opts(p):
        p.add_argument("--config", help="key=value pipeline configuration file")
        p.add_argument("--levels", help="comma-separated distance levels, e.g. 4K,32K,2M")
        p.add_argument("--chaining", choices=["greedy", "cycle-cover", "combined"])
        p.add_argument("--partial-order", action="store_true", help="enable branch-prediction chain ordering")
        p.add_argument("--hot-threshold", type=int)

    p = sub.add_parser("build", help="merge edge profiles or ingest LBR traces into a cfgprof file")
    p.add_argument("--edges", action="append", help="cfgprof input (repeatable; counts are summed)")
    p.add_argument("--lbr", help="LBR trace, one sample per line")
    p.add_argument("--block-map", help="address map for --lbr")
    p.add_argument("--out", help="output cfgprof path (default: stdout)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("layout", help="compute an inter-procedural block layout")
    p.add_argument("profile")
    pipeline_opts(p)
    p.add_argument("--out", help="cslayout output path (default: stdout)")
    p.add_argument("--chains-out", help="also dump the basic block chains")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("eval", help="score a layout against a profile")
    p.add_argument("layout")
    p.add_argument("profile")
    p.add_argument("--trace", help="block execution trace for cache/TLB replay")
    p.add_argument("--distance", action="append", help="extra distance to report (bytes, K/M suffix, or inf)")
    p.add_argument("--config")
    p.add_argument("--levels")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="evaluate several layout strategies side by side")
    p.add_argument("profile")
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--trace")
    p.add_argument("--distance", action="append")
    pipeline_opts(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-fixture", help="write a seeded synthetic program, trace, block map and LBR samples")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--functions", type=int, default=120)
    p.add_argument("--skew", type=float, default=0.5)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--trace-length", type=int, default=30000)
    p.add_argument("--lbr-depth", type=int, default=32)
    p.add_argument("--figure2", action="store_true", help="write the six-block two-path example instead")
    p.add_argument("--block-size", type=int, default=16)
    p.set_defaults(func=cmd_gen_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UnknownBlock as exc:
        print(f"stitchkit: error: unknown block(s): {' '.join(str(b) for b in exc.blocks)}", file=sys.stderr)
    except (ICFGError, ConfigError, CommandError, ValueError, OSError) as exc:
        print(f"stitchkit: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
