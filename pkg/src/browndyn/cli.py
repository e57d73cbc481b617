"""Command-line front end.

Subcommands:

    run <config>          run an experiment, write its results CSV
    reference <config>    print the reference value + quadrature error bound
    stability <flags>     scan a mean-square stability region to CSV
    slope <csv>           fit log-log convergence slopes from a results CSV

Exit codes: 0 on success, 2 on usage errors (bad flags, bad config, bad
input files), 1 on runtime failures.  ``BROWNDYN_WORKERS`` caps the thread
count used by the compiled trajectory kernels.

A config argument of the form ``preset:<name>`` loads a built-in preset
instead of a file (see ``browndyn.harness.PRESETS``).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import harness, stability
from .estimators import fit_slope
from .model import UsageError

WORKERS_ENV = "BROWNDYN_WORKERS"


def _apply_worker_env() -> None:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1, got {n}")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _load_config(arg: str) -> harness.ExperimentConfig:
    if arg.startswith("preset:"):
        return harness.parse_config(harness.preset_text(arg[len("preset:"):]))
    return harness.load_config(arg)


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    records = harness.run_experiment(cfg)
    for r in records:
        err = ("unstable" if math.isnan(r.error)
               else f"{r.error:.6e} +- {r.stderr:.1e}")
        print(f"{cfg.name}: {r.method:>14s}  h={r.h:<10.6g} error={err}")
    if cfg.out:
        print(f"wrote {len(records)} records to {cfg.out}")
    return 0


def _cmd_reference(args) -> int:
    cfg = _load_config(args.config)
    problem = cfg.problem()
    value, err = harness.run_reference(problem, cfg.observable)
    label = (f"{cfg.observable} reference for {cfg.potential}+{cfg.diffusion}"
             f" (d={cfg.d}, sigma={cfg.sigma!r})")
    if cfg.observable == "square_norm":
        print(f"{label}: {value!r}")
    else:
        print(f"{label}: {len(value)} bin masses on [-5, 5]")
        for i, m in enumerate(np.asarray(value)):
            print(f"  bin[{i:2d}] = {m!r}")
        print(f"  sum = {float(np.asarray(value).sum())!r}")
    print(f"quadrature error estimate: {err:.3e}")
    if args.grid_out:
        harness.write_problem_grid_csv(problem, args.grid_out)
        print(f"wrote problem grid to {args.grid_out}")
    return 0


def _cmd_stability(args) -> int:
    if args.res < 1:
        raise UsageError(f"--res must be >= 1, got {args.res}")
    if not args.pmax > args.pmin:
        raise UsageError("--pmax must exceed --pmin")
    if not args.q2max >= 0:
        raise UsageError("--q2max must be nonnegative")
    p_grid = np.linspace(args.pmin, args.pmax, args.res)
    q2_grid = np.linspace(0.0, args.q2max, args.res)
    scan = stability.scan_region(args.method, p_grid, q2_grid)
    harness.write_region_csv(scan, args.out)
    n_stable = int(scan.stable.sum())
    print(f"{scan.method}: {n_stable}/{scan.stable.size} grid cells stable; "
          f"wrote {args.out}")
    return 0


def _cmd_slope(args) -> int:
    records = harness.read_records_csv(args.csv)
    methods = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
    if args.method:
        if args.method not in methods:
            raise UsageError(f"{args.csv} has no records for {args.method!r}")
        methods = [args.method]
    for name in methods:
        group = [r for r in records if r.method == name]
        try:
            slope = fit_slope(group)
        except UsageError as exc:
            print(f"{name}: no fit ({exc})")
            continue
        print(f"{name}: slope = {slope:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="browndyn",
        description="Brownian-dynamics benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="config file path or preset:<name>")
    p_run.set_defaults(func=_cmd_run)

    p_ref = sub.add_parser("reference",
                           help="print the reference value for a config")
    p_ref.add_argument("config", help="config file path or preset:<name>")
    p_ref.add_argument("--grid-out", default=None,
                       help="also export sampled V(x), Sigma(x) to this CSV")
    p_ref.set_defaults(func=_cmd_reference)

    p_st = sub.add_parser("stability",
                          help="scan a mean-square stability region")
    p_st.add_argument("--method", default="pvd2_w2ito1")
    p_st.add_argument("--pmin", type=float, default=-4.0)
    p_st.add_argument("--pmax", type=float, default=0.0)
    p_st.add_argument("--q2max", type=float, default=4.0)
    p_st.add_argument("--res", type=int, default=400)
    p_st.add_argument("--out", required=True, help="output CSV path")
    p_st.set_defaults(func=_cmd_stability)

    p_sl = sub.add_parser("slope", help="fit convergence slopes from a CSV")
    p_sl.add_argument("csv", help="results CSV in the harness schema")
    p_sl.add_argument("--method", default=None,
                      help="fit only this method's records")
    p_sl.set_defaults(func=_cmd_slope)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_worker_env()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
