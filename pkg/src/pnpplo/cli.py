"""Command-line front end.

Exit status: 0 on success, 1 on numerical failure, 2 on I/O, protocol or
configuration errors.
"""

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import fileio
from .denoisers import ReflectionDenoiser, SubspaceDenoiser, estimate_alpha, sample_signals
from .experiments import (
    TASKS,
    ExperimentConfig,
    build_denoiser,
    degrade,
    expand_grid,
    grid_search,
    load_ground_truth,
    prepare,
    run_experiment,
)
from .landweber import StepStall
from .operators import adjoint_check
from .protocol import ExternalDenoiser, TransportError, serve_mock
from .rng import Xoshiro256
from .tensor import NoiseSpec

EXIT_OK, EXIT_NUMERIC, EXIT_IO = 0, 1, 2


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_config(args):
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    extra = "\n".join(f"{k} = {v}" for k, v in _parse_set(args.set).items())
    return ExperimentConfig.from_text(text + "\n" + extra)


def cmd_degrade(args):
    cfg = _load_config(args)
    truth = load_ground_truth(cfg)
    deg = degrade(truth, cfg.task, NoiseSpec(cfg.sigma, cfg.seed), cfg.mask_kind, cfg.mask_fraction, cfg.mask_seed)
    fileio.save_rawf32(args.out, deg.y)
    if args.truth_out:
        fileio.save_image(args.truth_out, truth)
    print(f"{cfg.task}: image {truth.shape} -> measurements {deg.y.shape}, |A| <= {deg.A.norm_bound:.6g}")
    return EXIT_OK


def _print_row(row, sigma, units):
    shown = dict(row)
    if units == "noise" and shown.get("final_f") is not None and sigma > 0:
        shown["final_f"] = shown["final_f"] / sigma**2
    for k in fileio.SUMMARY_COLUMNS + ("status",):
        print(f"{k:>11}: {'' if shown.get(k) is None else shown[k]}")


def cmd_solve(args):
    cfg = _load_config(args)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    row = run_experiment(cfg)
    _print_row(row, cfg.sigma, args.fidelity_units)
    if row["status"] == "infeasible-direction" or not math.isfinite(row["final_f"] or 0.0):
        return EXIT_NUMERIC
    return EXIT_OK


def _alpha_target(args):
    shape = (args.size, args.size, 1)
    if args.external:
        return ExternalDenoiser(args.external, args.sigma_f, shape=shape), shape
    n = args.size * args.size
    if args.denoiser in ("subspace", "reflection"):
        basis = Xoshiro256(args.seed).standard_normal((n, max(1, n // 4)))
        cls = SubspaceDenoiser if args.denoiser == "subspace" else ReflectionDenoiser
        return cls(basis, shape), shape
    cfg = ExperimentConfig(denoiser=args.denoiser, keep=args.keep, sigma_f=args.sigma_f)
    return build_denoiser(cfg, shape), shape


def cmd_estimate_alpha(args):
    T, shape = _alpha_target(args)
    with_oracle = T.oracle
    if args.external:
        # peers expose no fixed points; compare against the DCT low-pass span
        with_oracle = build_denoiser(ExperimentConfig(keep=args.keep), shape).oracle
    try:
        samples = sample_signals(shape, args.count, seed=args.seed)
        est = estimate_alpha(T, samples, with_oracle, count=args.pairs, seed=args.seed + 1, quantile=args.quantile)
    finally:
        T.close()
    advertised = "unset" if T.alpha is None else f"{T.alpha:g}"
    value = "undefined (T fixed every sample)" if est.alpha is None else repr(est.alpha)
    print(f"alpha estimate: {value} over {est.pairs} pairs ({est.skipped} skipped); advertised: {advertised}")
    return EXIT_OK


def cmd_grid(args):
    base = _load_config(args)
    sweep = {}
    for item in args.sweep or []:
        key, _, values = item.partition("=")
        kind = type(getattr(base, key.strip()))
        sweep[key.strip()] = [kind(v) if kind is not bool else v.lower() == "true" for v in values.split(",")]
    configs = expand_grid(base, sweep)
    result = grid_search(configs, out_root=args.out_dir, workers=args.workers)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        fileio.write_summary(os.path.join(args.out_dir, "grid_summary.csv"), result.rows)
        fileio.write_summary(os.path.join(args.out_dir, "grid_table.csv"), result.table, ("solver", "runs", "avg_psnr", "max_psnr"))
    print(f"{'solver':>8}  {'runs':>4}  {'average':>8}  {'max':>8}")
    for t in result.table:
        print(f"{t['solver']:>8}  {t['runs']:>4}  {t['avg_psnr']:8.3f}  {t['max_psnr']:8.3f}")
    for i, err in result.failures:
        print(f"entry {i} failed: {err}", file=sys.stderr)
    return EXIT_NUMERIC if result.failures and not result.rows else EXIT_OK


def cmd_check_adjoint(args):
    tasks = TASKS if args.task == "all" else (args.task,)
    status = EXIT_OK
    for task in tasks:
        cfg = ExperimentConfig(task=task, size=args.size, sigma=0.0)
        A = prepare(cfg).problem.A
        rep = adjoint_check(A, trials=args.trials, tol=args.tol, seed=args.seed)
        print(f"{task:>16}: {'pass' if rep.passed else 'FAIL'}  worst relative gap {rep.worst_violation:.3e}")
        if not rep.passed:
            status = EXIT_NUMERIC
    return status


def cmd_mock_denoiser(args):
    return serve_mock(args.mode, args.factor, args.fault)


def build_parser():
    parser = argparse.ArgumentParser(prog="pnpplo", description="Plug-and-play restoration with projected Landweber operators")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="key = value experiment file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    p = sub.add_parser("degrade", help="synthesise measurements for a task")
    config_args(p)
    p.add_argument("--out", required=True, help="RAWF32 file for the measurements")
    p.add_argument("--truth-out", help="also save the ground truth (.pgm or RAWF32)")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("solve", help="degrade, reconstruct and score one configuration")
    config_args(p)
    p.add_argument("--out-dir", help="directory for trace.csv, images and summary.csv")
    p.add_argument("--fidelity-units", choices=("raw", "noise"), default="raw", help="print final_f raw or divided by sigma^2")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("estimate-alpha", help="empirical demicontraction constant of a denoiser")
    p.add_argument("--denoiser", default="dct_soft", choices=("dct_soft", "dct_project", "subspace", "reflection"))
    p.add_argument("--external", metavar="CMD", help="query a denoiser peer process instead")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--keep", type=int, default=8)
    p.add_argument("--sigma-f", type=float, default=1.9)
    p.add_argument("--count", type=int, default=200, help="number of sampled inputs")
    p.add_argument("--pairs", type=int, default=5, help="fixed points per input")
    p.add_argument("--quantile", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_estimate_alpha)

    p = sub.add_parser("grid", help="run a parameter grid and report average/max PSNR per solver")
    config_args(p)
    p.add_argument("--sweep", action="append", metavar="KEY=V1,V2,...", help="values to sweep (repeatable)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("check-adjoint", help="inner-product test of the task operators")
    p.add_argument("--task", default="all", choices=TASKS + ("all",))
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_adjoint)

    p = sub.add_parser("mock-denoiser", help="reference denoiser peer on stdin/stdout")
    p.add_argument("--mode", choices=("identity", "scale"), default="identity")
    p.add_argument("--factor", type=float, default=0.5)
    p.add_argument("--fault", choices=("magic", "truncate"))
    p.set_defaults(func=cmd_mock_denoiser)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError, StepStall) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TransportError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
