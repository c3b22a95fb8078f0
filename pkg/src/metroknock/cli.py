"""Command line entry point: ``sample``, ``bench``, ``validate`` and ``order``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (BENCH_COLUMNS, SAMPLE_COLUMNS, pilot_rng, rows_to_csv, sample_rows, sweep,
                    validate)
from .config import ConfigError, KnockoffGenerator, RunConfig, SamplerConfig, build_model
from .engine import TractabilityError
from .factor_model import FactorGraphError
from .junction_tree import build_junction_tree, order_variables

ORDER_COLUMNS = ("step", "variable_id", "node_size", "width")


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.replicates is not None:
        cfg.replicates = args.replicates
    return cfg


def cmd_sample(args) -> int:
    cfg = _load(args)
    model = build_model(cfg.model)
    gen = KnockoffGenerator(model, SamplerConfig.from_mapping(cfg.sampler), pilot_rng(cfg.seed))
    rows = sample_rows(model, gen, cfg.replicates, cfg.seed)
    _write(rows_to_csv(rows, SAMPLE_COLUMNS), args.out)
    return 0


def cmd_bench(args) -> int:
    cfg = _load(args)
    bench = dict(cfg.bench)
    grid = bench.pop("grid", {})
    crn = bool(bench.pop("common_random_numbers", True))
    if bench:
        raise ConfigError(f"unknown bench keys: {sorted(bench)}")
    timings: list = []
    rows = sweep(cfg.model, cfg.sampler, grid, cfg.replicates, cfg.seed, crn, timings)
    _write(rows_to_csv(rows, BENCH_COLUMNS), args.out)
    if args.timing:
        cols = [c for c in timings[0] if c != "wall_time"] + ["wall_time"] if timings else ["wall_time"]
        Path(args.timing).write_text(rows_to_csv(timings, cols))
    return 0


def cmd_validate(args) -> int:
    cfg = _load(args)
    checks = validate(cfg.model, cfg.sampler, n=cfg.replicates, seed=cfg.seed)
    text = "".join(c.line() + "\n" for c in checks)
    _write(text, args.out)
    return 0 if all(c.passed is not False for c in checks) else 1


def cmd_order(args) -> int:
    cfg = _load(args)
    model = build_model(cfg.model)
    tree = model.tree() or build_junction_tree(model.graph)
    order = order_variables(tree)
    rows = [{"step": k + 1, "variable_id": v, "node_size": len(order.node_of[v]),
             "width": order.width} for k, v in enumerate(order.order)]
    _write(rows_to_csv(rows, ORDER_COLUMNS), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metroknock",
                                     description="Metropolized knockoff sampling")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--replicates", type=int, default=None,
                        help="overrides the config replicate count")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common],
                   help="knockoffs for fresh draws, one CSV row per coordinate"
                   ).set_defaults(func=cmd_sample)
    b = sub.add_parser("bench", parents=[common], help="MAC over a parameter grid")
    b.add_argument("--timing", default=None, help="write wall times to this CSV")
    b.set_defaults(func=cmd_bench)
    sub.add_parser("validate", parents=[common], help="exchangeability, marginal and budget checks"
                   ).set_defaults(func=cmd_validate)
    sub.add_parser("order", parents=[common], help="sampling order with per-step node sizes as CSV"
                   ).set_defaults(func=cmd_order)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FactorGraphError, TractabilityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
