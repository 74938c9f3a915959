"""Command-line entry point: ``accelpo {solve,run,sweep,check,plot}``.

Exit codes: 0 success, 1 a property check failed, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agents import ConfigError, TargetSupportError, run
from .harness import check as checks
from .harness.config import SEED_ENV, build_config, load_run_config, parse_overrides
from .harness.csvio import SchemaError, emit_aggregates, emit_trace
from .harness.sweep import PRESETS, SweepSpec, axis_columns, load_sweep, mdp_from_extras, preset, run_sweeps
from .mdp import MazeError, default_map, load_maze, value_iteration

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _read_map(path) -> str:
    return Path(path).read_text(encoding="utf-8") if path else default_map()


def optimal_path_length(mdp, pi_star, max_steps: int = 100_000) -> int:
    """Steps from the start state to the first goal reward under a deterministic policy."""
    s = int(np.argmax(mdp.initial_dist))
    actions = np.argmax(pi_star, axis=1)
    for k in range(1, max_steps + 1):
        a = actions[s]
        if mdp.terminal is not None and mdp.terminal[s, a]:
            return k
        s = int(np.argmax(mdp.transitions[s, a]))
    return -1


def cmd_solve(args) -> int:
    mdp = load_maze(_read_map(args.map), args.gamma)
    _, pi_star, j_star = value_iteration(mdp, tol=1e-10)
    print(f"n_states {mdp.n_states}")
    print(f"J* {j_star:.12g}")
    print(f"optimal_path_length {optimal_path_length(mdp, pi_star)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, extras = load_run_config(args.config, parse_overrides(args.set), args.seed)
    mdp = mdp_from_extras(extras)
    trace = run(mdp, cfg)
    text = emit_trace(trace)
    out = args.out or extras.get("out")
    if out:
        Path(out).write_text(text, encoding="utf-8")
        print(f"{cfg.algorithm} seed {cfg.seed}: {trace.n_episodes} episodes, {trace.n_steps} steps, "
              f"total regret {trace.total_regret:.6g}, final regret {trace.final_regret:.6g} -> {out}",
              file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if bool(args.preset) == bool(args.config):
        raise UsageError("sweep needs exactly one of --preset or --config")
    if args.preset:
        specs, extras = preset(args.preset), {}
    else:
        specs, extras = load_sweep(args.config)
    overrides = parse_overrides(args.set)
    extras.update({k: overrides.pop(k) for k in ("map", "gamma") if k in overrides})
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
        specs = [replace(s, seeds=seeds) for s in specs]
    if overrides:
        specs = [SweepSpec(build_config(overrides, s.base)[0], s.axes, s.seeds) for s in specs]
    total = sum(len(s.points()) * len(s.seeds) for s in specs)
    done = 0

    def progress(tr):
        nonlocal done
        done += 1
        print(f"[{done}/{total}] {tr.algorithm} seed {tr.seed} total regret {tr.total_regret:.6g}",
              file=sys.stderr)

    records = run_sweeps(specs, mdp_from_extras(extras), jobs=args.jobs, raw_dir=args.raw_dir, progress=progress)
    text = emit_aggregates(records, axis_columns(records))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    seed = args.seed if args.seed is not None else checks.AUDIT_SEED
    results = checks.run_checks(seed)
    print(f"audit seed {seed}")
    print(checks.format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_plot(args) -> int:
    from .harness.plot import plot_csvs

    out = args.out or "plot.svg"
    n = plot_csvs(args.csv, out, x=args.x, x_axis=args.x_axis, series_axis=args.series)
    print(f"{n} series -> {out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accelpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a maze exactly and report J* and the optimal path")
    p.add_argument("map", nargs="?", help="ASCII map file (default: built-in 48-state maze)")
    p.add_argument("--gamma", type=float, default=0.99)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="run one agent and write its regret trace CSV")
    p.add_argument("--config", help="TOML run config")
    p.add_argument("--seed", type=int, help=f"overrides the config seed (fallback ${SEED_ENV})")
    p.add_argument("--out", help="trace CSV path (default: the config's out key, else stdout)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of configs over seeds and write aggregates")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--config", help="TOML sweep file with [base], [axes] and seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", help="comma-separated seed list replacing the sweep's")
    p.add_argument("--out", help="aggregate CSV path (default stdout)")
    p.add_argument("--raw-dir", help="also write one trace CSV per run here")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a base config key")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the randomized invariant suite")
    p.add_argument("--seed", type=int, help="audit seed")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="render trace or aggregate CSVs to an SVG line chart")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="SVG path (default plot.svg)")
    p.add_argument("--x", choices=("step", "episode"), default="step", help="x axis for traces")
    p.add_argument("--x-axis", help="aggregate column for the x axis (default h)")
    p.add_argument("--series", help="aggregate column that splits series")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except TargetSupportError as exc:
        print(f"accelpo {args.command}: run aborted, {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigError, SchemaError, MazeError, UsageError, OSError, ValueError) as exc:
        print(f"accelpo {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
