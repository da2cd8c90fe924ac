"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run under pytest (lines are collected in the terminal summary) or directly
with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from helpers import random_instance
from pnpplo.checks import (
    SolutionSet,
    check_fejer,
    check_rate_bounds,
    distance_to_solution_set,
    fit_linear_rate,
    oracle_feasible_point,
)
from pnpplo.denoisers import (
    DCTDenoiser,
    LinearDenoiser,
    ReflectionDenoiser,
    SoftThresholdDenoiser,
    SubspaceDenoiser,
    estimate_alpha,
    relax,
    sample_signals,
    spc_margin,
)
from pnpplo.experiments import SOLVERS, ExperimentConfig, prepare, run_experiment, solve
from pnpplo.landweber import StepRule, extrapolated_landweber_apply, fidelity, grad_fidelity, landweber_apply, tau
from pnpplo.operators import (
    adjoint_check,
    build_conv2d_circular,
    build_dense,
    build_downsample_blur,
    build_identity,
    build_masked_fourier,
    gaussian_kernel,
    kernel_symbol,
    make_mask,
    op_norm_estimate,
    uniform_kernel,
)
from pnpplo.projections import L2Ball, Singleton
from pnpplo.protocol import ExternalDenoiser, TransportError
from pnpplo.rng import Xoshiro256
from pnpplo.solvers import SCFPProblem, SolveConfig, pnp_fbs, pnp_plo, red_pro
from pnpplo.tensor import Signal, inner, norm2

ALPHA = -1.0
W_VALUES = (0.5, 1.0, 1.5)
N_INSTANCES = 24


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def theorem_runs():
    """PnP-PLO (tau rule) on seeded random instances for every w, with oracle points."""
    runs = []
    solve_time = 0.0
    for seed in range(N_INSTANCES):
        problem, _ = random_instance(seed)
        x_star = oracle_feasible_point(problem, tol=1e-9)
        for w in W_VALUES:
            cfg = SolveConfig(max_iters=10_000, w=w, stop_tol=1e-12, keep_iterates=True, record_timing=False)
            t0 = time.perf_counter()
            x, trace = pnp_plo(problem, cfg)
            solve_time += time.perf_counter() - t0
            runs.append((seed, w, problem, x, trace, x_star))
    return runs, solve_time


def test_criterion_01_convergence(theorem_runs):
    runs, solve_time = theorem_runs
    worst_fix = worst_q = worst_d = 0.0
    for _, _, problem, x, _, _ in runs:
        ax = problem.A(x)
        worst_fix = max(worst_fix, norm2(problem.T(x) - x))
        worst_q = max(worst_q, norm2(ax - problem.Q.project(ax)))
        worst_d = max(worst_d, distance_to_solution_set(problem, x))
    ok = worst_fix <= 1e-6 and worst_q <= 1e-6 and worst_d <= 1e-4 and solve_time < 10.0
    report(
        1,
        ok,
        f"{len(runs)} runs on {N_INSTANCES} instances: max |T(x)-x|={worst_fix:.1e}, "
        f"max dist(Ax,Q)={worst_q:.1e}, max d(x,F)={worst_d:.1e}, solve time {solve_time:.2f}s",
    )


def test_criterion_02_fejer(theorem_runs):
    runs, _ = theorem_runs
    bad = 0
    worst = math.inf
    steps = 0
    for _, w, _, _, trace, x_star in runs:
        rep = check_fejer(trace.iterates, x_star, ALPHA, w, rtol=1e-9)
        bad += len(rep.violations)
        steps += rep.steps
        worst = min(worst, rep.worst_margin)
    report(2, bad == 0, f"{steps} steps checked, {bad} violations, worst margin {worst:.2e}")


def test_criterion_03_partial_sums(theorem_runs):
    runs, _ = theorem_runs
    bad = 0
    for _, w, problem, _, trace, x_star in runs:
        d0_sq = norm2(problem.x0 - x_star) ** 2
        rep = check_rate_bounds(trace, d0_sq, ALPHA, w)
        bad += len(rep.partial_sum_violations) + (not rep.summable)
    report(3, bad == 0, f"{len(runs)} runs, {bad} violations of (k+1) c min|dx|^2 <= |x0-x*|^2")


def test_criterion_04_polyak_bound():
    bad = 0
    runs = 0
    for seed in range(N_INSTANCES):
        problem, _ = random_instance(seed)
        d0 = distance_to_solution_set(problem, problem.x0)
        for w in W_VALUES:
            cfg = SolveConfig(max_iters=1000, w=w, step_rule=StepRule("polyak"), stop_tol=0.0, record_timing=False)
            _, trace = pnp_plo(problem, cfg)
            rep = check_rate_bounds(trace, d0 * d0, ALPHA, w, polyak=True, d_opt=d0)
            bad += len(rep.polyak_violations)
            runs += 1
    report(4, bad == 0, f"{runs} Polyak runs of 1000 iterations, {bad} violations of f_best <= L_f d0 / sqrt(k+1)")


def _rate_instance(seed):
    rng = np.random.default_rng(1000 + seed)
    n, p, m = 20, 10, 5
    A = build_dense(rng.standard_normal((m, n)))
    T = SubspaceDenoiser(rng.standard_normal((n, p)), (n, 1, 1))
    x_true = Signal(T.basis @ rng.standard_normal(p))
    return SCFPProblem(A, Singleton(A(x_true)), T, x0=Signal(5.0 * rng.standard_normal(n)))


def test_criterion_05_linear_rate():
    results = []
    for seed in range(20):
        problem = _rate_instance(seed)
        _, trace = pnp_plo(problem, SolveConfig(max_iters=1500, stop_tol=0.0, keep_iterates=True, record_timing=False))
        oracle = SolutionSet(problem)
        dist = [oracle.distance(x) for x in trace.iterates]
        # floor sits above the oracle's own rounding level (~1e-13 |x|)
        results.append(fit_linear_rate(dist, floor=1e-9 * dist[0]))
    contracting = all(r.q < 0.999 for r in results)
    good = sum(r.q < 0.999 and r.residual < 0.1 for r in results)
    report(
        5,
        contracting and good >= 10,
        f"{good}/{len(results)} seeds with q<0.999 and fit residual<0.1; max q={max(r.q for r in results):.4f}, "
        f"residuals {min(r.residual for r in results):.1e}..{max(r.residual for r in results):.2e}",
    )


def test_criterion_06_reductions():
    worst_fbs = worst_pro = 0.0
    for seed in range(5):
        problem, _ = random_instance(200 + seed, singleton=True)
        nsq = problem.A.norm_bound**2
        lam = 0.7
        cfg = SolveConfig(max_iters=100, lambda_schedule=lam, w=1.0, step_rule=StepRule("constant", 1.0), stop_tol=0.0, keep_iterates=True)
        _, t_plo = pnp_plo(problem, cfg)
        _, t_fbs = pnp_fbs(problem, lam / nsq, 100, keep_iterates=True)
        worst_fbs = max(worst_fbs, max(norm2(a - b) for a, b in zip(t_plo.iterates, t_fbs.iterates)))

        lam0, w = 0.9, 0.5
        cfg = SolveConfig(
            max_iters=100,
            lambda_schedule=lambda k: lam0 * (k + 1) ** -0.1,
            w=w,
            step_rule=StepRule("constant", 1.0),
            stop_tol=0.0,
            keep_iterates=True,
        )
        _, t_plo = pnp_plo(problem, cfg)
        _, t_pro = red_pro(problem, StepRule("diminishing", mu0=lam0 / nsq, exponent=0.1), w, 100, keep_iterates=True)
        worst_pro = max(worst_pro, max(norm2(a - b) for a, b in zip(t_plo.iterates, t_pro.iterates)))
    ok = worst_fbs <= 1e-10 and worst_pro <= 1e-10
    report(6, ok, f"5 seeds x 100 iterations: max gap to PnP-FBS {worst_fbs:.1e}, to RED-PRO {worst_pro:.1e}")


def shipped_operators():
    gen = np.random.default_rng(7)
    return {
        "identity": build_identity((6, 6, 1)),
        "dense": build_dense(gen.standard_normal((12, 20))),
        "conv_uniform9_direct": build_conv2d_circular(uniform_kernel(9), (16, 16, 1), method="direct"),
        "conv_uniform9_fft": build_conv2d_circular(uniform_kernel(9), (40, 40, 1), method="fft"),
        "conv_gaussian": build_conv2d_circular(gaussian_kernel(9, 1.6), (16, 16, 1)),
        "downsample_blur_x3": build_downsample_blur(gaussian_kernel(7, 1.6), (18, 18, 1), 3),
        "downsample_blur_x2": build_downsample_blur(gaussian_kernel(7, 1.6), (16, 16, 1), 2),
        "masked_fourier_random": build_masked_fourier(make_mask("random", 0.3, (16, 16), seed=1)),
        "masked_fourier_radial": build_masked_fourier(make_mask("radial", 0.25, (16, 16), seed=2)),
        "masked_fourier_cartesian": build_masked_fourier(make_mask("cartesian", 0.4, (16, 16), seed=3)),
    }


def _rand(shape, gen, domain):
    return Signal._wrap(gen.standard_normal(shape), domain)


def test_criterion_07_tau_and_norm_free_identity():
    ops = shipped_operators()
    per_op = math.ceil(10_000 / len(ops))
    gen = Xoshiro256(11)
    min_tau = math.inf
    worst_gap = 0.0
    evals = 0
    for A in ops.values():
        nsq = A.norm_bound**2
        for i in range(per_op):
            center = _rand(A.out_shape, gen, A.out_domain)
            radius = 0.05 * norm2(center) * gen.random()
            Q = L2Ball(center, radius)
            x = _rand(A.in_shape, gen, A.in_domain) * (10.0 ** (4 * gen.random() - 2))
            t = tau(A, Q, x, norm_sq=nsq)
            min_tau = min(min_tau, t)
            exact = x + t * (landweber_apply(A, Q, x, norm_sq=nsq) - x)
            free = extrapolated_landweber_apply(A, Q, x)
            worst_gap = max(worst_gap, norm2(exact - free) / max(1.0, norm2(free)))
            evals += 1
    ok = evals >= 10_000 and min_tau >= 1 - 1e-12 and worst_gap <= 1e-12
    report(7, ok, f"{evals} evaluations on {len(ops)} operators: min tau={min_tau:.15f}, max path gap={worst_gap:.1e}")


def test_criterion_08_operator_calculus():
    ops = shipped_operators()
    adj = {name: adjoint_check(A, trials=100, tol=1e-10, seed=3) for name, A in ops.items()}
    adj_ok = all(r.passed for r in adj.values())
    worst_adj = max(r.worst_violation for r in adj.values())

    norm_gap = 0.0
    for kernel in (uniform_kernel(9), gaussian_kernel(9, 1.6), gaussian_kernel(7, 1.6)):
        for shape in ((32, 32), (64, 64), (24, 40)):
            for method in ("direct", "fft"):
                A = build_conv2d_circular(kernel, shape + (1,), method=method)
                truth = float(np.max(np.abs(kernel_symbol(kernel, *shape))))
                norm_gap = max(norm_gap, abs(op_norm_estimate(A, tol=1e-15, max_iter=20_000) - truth))

    gen = np.random.default_rng(5)
    fd_worst = 0.0
    points = 0
    fd_ops = [ops["dense"], ops["conv_gaussian"], ops["downsample_blur_x2"], ops["masked_fourier_random"]]
    for A in fd_ops:
        for _ in range(25):
            center = Signal._wrap(gen.standard_normal(A.out_shape), A.out_domain)
            Q = L2Ball(center, 0.1 * norm2(center))
            while True:
                x = Signal._wrap(3.0 * gen.standard_normal(A.in_shape), A.in_domain)
                ax = A(x)
                if not Q.contains(ax):
                    break
            g = grad_fidelity(A, Q, x)
            h = 1e-5 * max(1.0, norm2(x))
            d = Signal._wrap(gen.standard_normal(A.in_shape), A.in_domain)
            d = d / norm2(d)
            fd = (fidelity(A, Q, x + d * h) - fidelity(A, Q, x - d * h)) / (2 * h)
            fd_worst = max(fd_worst, abs(fd - inner(g, d)) / norm2(g))
            points += 1
    ok = adj_ok and norm_gap <= 1e-8 and fd_worst <= 1e-5
    report(
        8,
        ok,
        f"adjoint worst {worst_adj:.1e} over {len(ops)} operators; power-iteration norm gap {norm_gap:.1e}; "
        f"finite-difference gradient worst {fd_worst:.1e} at {points} exterior points",
    )


def shipped_denoisers():
    gen = np.random.default_rng(9)
    n = 24
    basis = gen.standard_normal((n, 7))
    q, _ = np.linalg.qr(gen.standard_normal((n, n)))
    eig = np.concatenate([np.ones(5), gen.random(n - 5)])
    return {
        "subspace": (SubspaceDenoiser(basis, (n, 1, 1)), -1.0),
        "linear_projection": (LinearDenoiser(q[:, :6] @ q[:, :6].T), -1.0),
        "dct_project": (DCTDenoiser((8, 8, 1), 3, "project"), -1.0),
        "soft_threshold": (SoftThresholdDenoiser(basis, 0.5), -1.0),
        "dct_soft": (DCTDenoiser((8, 8, 1), 3, "soft", 0.8), -1.0),
        "reflection": (ReflectionDenoiser(basis, (n, 1, 1)), 0.0),
        "linear_smoother": (LinearDenoiser(q @ np.diag(eig) @ q.T), None),
        "relaxed_subspace": (relax(SubspaceDenoiser(basis, (n, 1, 1)), 1.5), None),
    }


def test_criterion_09_demicontraction():
    estimates = {}
    margins = {}
    for name, (T, expected) in shipped_denoisers().items():
        samples = sample_signals(T.shape, 200, seed=4)
        est = estimate_alpha(T, samples, count=5, seed=5)
        if expected is not None:
            estimates[name] = abs(est.alpha - expected)
        gen = Xoshiro256(6)
        worst = math.inf
        for x in sample_signals(T.shape, 1000, seed=8):
            y = T.oracle.sample(gen)
            worst = min(worst, spc_margin(T, x, y, T.alpha) / (1.0 + norm2(x - y) ** 2))
        margins[name] = worst
    est_ok = all(v <= 1e-8 for v in estimates.values())
    spc_ok = all(v >= -1e-12 for v in margins.values())
    report(
        9,
        est_ok and spc_ok,
        f"max |alpha_hat - alpha| = {max(estimates.values()):.1e} over {len(estimates)} denoisers; "
        f"worst relative SPC margin {min(margins.values()):.1e} over {len(margins)} denoisers x 1000 pairs",
    )


def _first_hit(values, limit, factor=1.05):
    for k, v in enumerate(values):
        if v <= factor * limit:
            return k
    return len(values)


def test_criterion_10_speed_ordering():
    wins = 0
    rows = []
    for seed in range(5):
        counts = {}
        for solver in SOLVERS:
            cfg = ExperimentConfig(task="deblur_gaussian", size=64, seed=seed, image_seed=seed, solver=solver, K=1500)
            prep = prepare(cfg)
            _, trace = solve(cfg, prep.problem)
            misfit = [r.misfit for r in trace.records]
            counts[solver] = _first_hit(misfit, misfit[-1])
        others = min(v for k, v in counts.items() if k != "pnp_plo")
        wins += counts["pnp_plo"] < others
        rows.append(" ".join(f"{k}={v}" for k, v in counts.items()))
    report(10, wins >= 4, f"PnP-PLO fastest on {wins}/5 seeds; iterations to 1.05x limit: " + " | ".join(rows))


MOCK = [sys.executable, "-m", "pnpplo", "mock-denoiser"]


def test_criterion_11_protocol():
    gen = np.random.default_rng(12)
    shapes = [(1, 1, 1), (7, 5, 1), (16, 16, 3), (3, 9, 2)]
    exact = True
    for mode, factor in (("identity", 1.0), ("scale", 0.5)):
        with ExternalDenoiser(MOCK + ["--mode", mode], sigma_f=1.5) as T:
            for shape in shapes:
                x = Signal(gen.standard_normal(shape) * 100.0)
                got = T(x).data
                want = (x.data.astype(np.float32) * np.float32(factor)).astype(np.float64)
                exact &= got.dtype == np.float64 and np.array_equal(got, want)
    faults = {}
    for fault in ("magic", "truncate"):
        with ExternalDenoiser(MOCK + ["--fault", fault], sigma_f=1.0) as T:
            try:
                T(Signal(np.ones((4, 4, 1))))
                faults[fault] = "returned a result"
            except TransportError as exc:
                faults[fault] = f"TransportError ({exc})"
    faults_ok = all(v.startswith("TransportError") for v in faults.values())
    report(11, exact and faults_ok, f"bit-exact identity/scale: {exact}; faults: {faults}")


def test_criterion_12_determinism(tmp_path):
    configs = [
        ExperimentConfig(task="deblur_gaussian", K=40),
        ExperimentConfig(task="deblur_uniform9", solver="red_sd", K=30),
        ExperimentConfig(task="sr_x3", size=48, solver="red_pro", K=30),
        ExperimentConfig(task="sr_x2", size=32, solver="pnp_fbs", K=30),
        ExperimentConfig(task="csmri", size=32, K=30, step_rule="polyak"),
    ]
    files = ("trace.csv", "summary.csv", "restored.rawf32", "ground_truth.rawf32", "degraded.rawf32")
    mismatches = []
    for i, cfg in enumerate(configs):
        a, b = tmp_path / f"{i}a", tmp_path / f"{i}b"
        run_experiment(cfg, str(a))
        run_experiment(cfg, str(b))
        for f in files:
            if (a / f).read_bytes() != (b / f).read_bytes():
                mismatches.append(f"{cfg.task}/{f}")
    report(12, not mismatches, f"{len(configs)} configs x {len(files)} files, mismatches: {mismatches or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
