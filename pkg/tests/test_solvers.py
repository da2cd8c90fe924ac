import io
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from helpers import random_instance, two_by_two
from pnpplo.checks import SolutionSet
from pnpplo.denoisers import LinearDenoiser, SubspaceDenoiser
from pnpplo.landweber import StepRule, fidelity
from pnpplo.operators import build_dense
from pnpplo.projections import Singleton
from pnpplo.solvers import TRACE_COLUMNS, InvalidParameter, SCFPProblem, SolveConfig, pnp_fbs, pnp_plo, red_pro, red_sd
from pnpplo.tensor import Signal, norm2


def identity_denoiser(n):
    return SubspaceDenoiser(np.eye(n), (n, 1, 1))


def test_start_in_solution_set_stays_put():
    problem = two_by_two()
    # A (1, 1) is the centre of Q, so (1, 1) is an interior point of F
    x_star = Signal([1.0, 1.0])
    problem.x0 = x_star
    _, trace = pnp_plo(problem, SolveConfig(max_iters=20, stop_tol=0.0, keep_iterates=True))
    assert all(norm2(x - x_star) <= 1e-14 for x in trace.iterates)


def test_two_by_two_converges():
    problem = two_by_two()
    x, trace = pnp_plo(problem, SolveConfig(max_iters=5000))
    assert trace.status == "converged"
    assert norm2(problem.T(x) - x) <= 1e-6
    assert norm2(problem.A(x) - problem.Q.center) <= 0.1 + 1e-6
    # F is the segment t (1, 1) with |t - 1| <= 0.1 / sqrt(5)
    t = x.vector()[0]
    assert abs(t - 1) <= 0.1 / math.sqrt(5) + 1e-6


def test_polyak_rule_two_by_two():
    problem = two_by_two()
    x, _ = pnp_plo(problem, SolveConfig(max_iters=5000, step_rule=StepRule("polyak")))
    assert SolutionSet(problem).distance(x) <= 1e-6


def test_singleton_constant_step_matches_fbs():
    problem, _ = random_instance(3, singleton=True)
    lam = 0.6
    cfg = SolveConfig(max_iters=120, lambda_schedule=lam, step_rule=StepRule("constant", 1.0), stop_tol=0.0, keep_iterates=True)
    _, a = pnp_plo(problem, cfg)
    _, b = pnp_fbs(problem, lam / problem.A.norm_bound**2, 120, keep_iterates=True)
    assert len(a.iterates) == len(b.iterates) == 121
    assert max(norm2(p - q) for p, q in zip(a.iterates, b.iterates)) <= 1e-10


def test_red_sd_with_identity_is_gradient_descent():
    problem, _ = random_instance(4, singleton=True)
    n = problem.A.in_shape[0]
    problem.T = identity_denoiser(n)
    step = 0.5 / problem.A.norm_bound**2
    _, trace = red_sd(problem, step, 3.0, 30, keep_iterates=True)
    x = problem.x0
    M, y = problem.A.matrix, problem.Q.center.vector()
    for got in trace.iterates[1:]:
        x = Signal(x.vector() - step * M.T @ (M @ x.vector() - y))
        assert norm2(got - x) <= 1e-12 * norm2(x)


def test_zero_steps_keep_or_apply_denoiser():
    problem = two_by_two()
    _, trace = red_sd(problem, 0.0, 1.0, 10, keep_iterates=True)
    assert all(np.array_equal(x.data, problem.x0.data) for x in trace.iterates)
    _, trace = pnp_fbs(problem, 0.0, 3, keep_iterates=True)
    tx0 = problem.T(problem.x0)
    assert all(np.allclose(x.data, tx0.data) for x in trace.iterates[1:])


def test_red_sd_reaches_zero_objective():
    problem = two_by_two()
    lam = 1.0
    x, _ = red_sd(problem, 0.1, lam, 20000)

    def objective(v):
        s = Signal(v)
        return fidelity(problem.A, problem.Q, s) + 0.5 * lam * norm2(s - problem.T(s)) ** 2

    # independent minimiser of the same smooth objective
    ref = minimize(objective, problem.x0.vector(), method="BFGS", options={"gtol": 1e-12})
    assert ref.fun < 1e-8
    assert objective(x.vector()) < 1e-8
    assert SolutionSet(problem).distance(x) <= 1e-3


def test_red_pro_zero_step_lands_in_fix():
    problem, _ = random_instance(5)
    x, _ = red_pro(problem, 0.0, 0.5, 200, stop_tol=0.0)
    assert norm2(problem.T(x) - x) <= 1e-12 * max(1.0, norm2(x))


def test_red_pro_two_by_two_reaches_solution_set():
    problem = two_by_two()
    x, _ = red_pro(problem, StepRule("diminishing", mu0=0.2, exponent=0.1), 0.5, 100_000, stop_tol=1e-13, record_timing=False)
    assert SolutionSet(problem).distance(x) <= 1e-4


def test_fbs_identity_denoiser_is_gradient_descent():
    problem, _ = random_instance(6, singleton=True)
    problem.T = identity_denoiser(problem.A.in_shape[0])
    s = 0.3 / problem.A.norm_bound**2
    _, a = pnp_fbs(problem, s, 20, keep_iterates=True)
    _, b = red_sd(problem, s, 0.0, 20, keep_iterates=True)
    assert max(norm2(p - q) for p, q in zip(a.iterates, b.iterates)) <= 1e-12


def test_w_validation():
    problem = two_by_two()
    with pytest.raises(InvalidParameter):
        pnp_plo(problem, SolveConfig(w=2.5))
    with pytest.raises(InvalidParameter):
        red_pro(problem, 0.1, 0.9 + 0.2, 5)
    _, trace = pnp_plo(problem, SolveConfig(w=2.5, override=True, max_iters=5))
    assert not trace.theory_applies
    _, trace = pnp_plo(problem, SolveConfig(w=1.5, max_iters=5))
    assert trace.theory_applies


def test_unknown_alpha_requires_override():
    problem = two_by_two()
    problem.T = LinearDenoiser(np.diag([1.0, 0.5]))
    problem.T.alpha = None
    with pytest.raises(InvalidParameter):
        pnp_plo(problem, SolveConfig())


def test_lambda_outside_range_rejected():
    with pytest.raises(InvalidParameter):
        pnp_plo(two_by_two(), SolveConfig(lambda_schedule=1.5))
    with pytest.raises(ValueError):
        pnp_plo(two_by_two(), SolveConfig(step_rule=StepRule("diminishing")))


def test_stall_reported_as_status():
    A = build_dense(np.array([[1.0, 0.0], [0.0, 0.0]]))
    problem = SCFPProblem(A, Singleton(Signal([0.0, 1.0])), identity_denoiser(2), x0=Signal([0.0, 0.0]))
    _, trace = pnp_plo(problem, SolveConfig(max_iters=10))
    assert trace.status == "infeasible-direction"


def test_determinism_and_csv_header():
    problem, _ = random_instance(7)
    cfg = SolveConfig(max_iters=50, record_timing=False)
    _, a = pnp_plo(problem, cfg)
    _, b = pnp_plo(problem, cfg)
    assert a.to_csv() == b.to_csv()
    text = a.to_csv()
    assert text.splitlines()[0] == ",".join(TRACE_COLUMNS)
    buf = io.StringIO()
    a.to_csv(buf)
    assert buf.getvalue() == text


def test_trace_every_thins_records():
    problem, _ = random_instance(8)
    _, trace = pnp_plo(problem, SolveConfig(max_iters=25, trace_every=10, stop_tol=0.0))
    assert trace.column("k") == [0, 10, 20, 24]


@pytest.mark.parametrize("seed", range(6))
def test_converged_runs_are_feasible(seed):
    problem, _ = random_instance(seed)
    stop_tol = 1e-10
    x, trace = pnp_plo(problem, SolveConfig(max_iters=20000, stop_tol=stop_tol, record_timing=False))
    assert trace.status == "converged"
    scale = max(1.0, norm2(problem.x0))
    ax = problem.A(x)
    assert norm2(problem.T(x) - x) <= 10 * stop_tol * scale
    assert norm2(ax - problem.Q.project(ax)) <= 10 * stop_tol * scale
