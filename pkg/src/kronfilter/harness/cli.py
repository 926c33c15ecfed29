"""Command-line entry points.

Subcommands mirror the reproduction workflow: ``simulate`` writes truth
trajectories, ``filter`` runs a single estimator, ``benchmark`` runs the
full (estimator, seed) grid, and ``structure`` produces the sparsity-
pattern dumps. Output directory precedence: --output flag, then the
KRONFILTER_OUTPUT environment variable, then the config's output_dir.

Exit codes: 0 on success, 1 on configuration/usage errors, 2 when some
cells of a benchmark failed (partial results preserved).
"""

from __future__ import annotations

import argparse
import os
import sys

from ..errors import ConfigError, KronfilterError
from .config import parse_config
from .runner import run_cell, run_experiment, simulate_truth_files, true_structure_dump


def _resolve_output(cfg, flag_value):
    if flag_value:
        return flag_value
    env = os.environ.get("KRONFILTER_OUTPUT")
    if env:
        return env
    return cfg.output_dir


def _cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    out = _resolve_output(cfg, args.output)
    files = simulate_truth_files(cfg, out)
    print(f"wrote {len(files)} trajectory files under {out}")
    return 0


def _cmd_filter(args) -> int:
    cfg = parse_config(args.config)
    if args.estimator not in cfg.estimators:
        raise ConfigError(
            f"estimator {args.estimator!r} not in configured set {cfg.estimators}")
    out = _resolve_output(cfg, args.output)
    os.makedirs(out, exist_ok=True)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    cell = run_cell(cfg, args.estimator, seed, out,
                    cfg.shape.d <= cfg.structure_dump_max)
    if cell.status != "ok":
        print(f"filter cell failed: {cell.message}", file=sys.stderr)
        return 2
    mean = float(cell.rmse_normalized.mean())
    print(f"estimator={args.estimator} seed={seed} mean normalized RMSE {mean:.6g}")
    for path in cell.files:
        print(f"  {path}")
    return 0


def _cmd_benchmark(args) -> int:
    cfg = parse_config(args.config)
    out = _resolve_output(cfg, args.output)
    bundle = run_experiment(cfg, jobs=args.jobs, output_dir=out)
    n_err = sum(1 for c in bundle.cells if c.status != "ok")
    print(f"benchmark complete: {len(bundle.cells) - n_err}/{len(bundle.cells)} "
          f"cells ok; manifest {bundle.manifest_path}")
    for c in bundle.cells:
        if c.status != "ok":
            print(f"  FAILED {c.estimator} seed {c.seed}: {c.message}", file=sys.stderr)
    return 0 if bundle.ok else 2


def _cmd_structure(args) -> int:
    cfg = parse_config(args.config)
    out = _resolve_output(cfg, args.output)
    os.makedirs(out, exist_ok=True)
    files = true_structure_dump(cfg, out)
    estimators = [args.estimator] if args.estimator else list(cfg.estimators)
    failures = 0
    for est in estimators:
        cell = run_cell(cfg, est, cfg.seeds[0], out, dump_structures=True)
        if cell.status != "ok":
            failures += 1
            print(f"  FAILED {est}: {cell.message}", file=sys.stderr)
        else:
            files.extend(cell.files)
    print(f"wrote {len(files)} structure files under {out}")
    return 0 if failures == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kronfilter",
        description="Kronecker-structured covariance estimation and ensemble "
                    "Kalman filtering for PDE-driven fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write truth trajectories to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("filter", help="run one estimator on one seed")
    p.add_argument("--config", required=True)
    p.add_argument("--estimator", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("benchmark", help="run the full estimator x seed grid")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("structure", help="dump covariance/precision structures")
    p.add_argument("--config", required=True)
    p.add_argument("--estimator", default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_structure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KronfilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
