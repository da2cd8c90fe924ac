"""PnP-PLO and the gradient-based baselines (RED via SD, RED-PRO, PnP-FBS).

All four solvers share one driver loop that records a :class:`SolveTrace`.
"""

import csv
import io
import time
from dataclasses import dataclass, field

from .denoisers import admissible_w
from .landweber import STALL_RTOL, StepRule, StepStall
from .operators import norm_sq as _norm_sq
from .tensor import norm2, psnr

TRACE_COLUMNS = ("k", "f", "residual", "step", "dist_Q", "denoiser_residual", "psnr", "wall_ms")


class InvalidParameter(ValueError):
    """A solver parameter is outside its provable range and no override was given."""


@dataclass
class SCFPProblem:
    """Find ``x`` in ``Fix(T)`` with ``Ax`` in ``Q``.

    ``x0`` defaults to the centre of ``Q`` when ``A`` preserves shape and to
    ``A*`` of it otherwise. ``metric(x)``, if given, replaces the PSNR against
    ``ground_truth`` in traces.
    """

    A: object
    Q: object
    T: object
    ground_truth: object = None
    x0: object = None
    metric: object = None

    def quality(self, x, peak):
        if self.metric is not None:
            return self.metric(x)
        if self.ground_truth is None:
            return None
        return psnr(self.ground_truth, x, peak)

    def initial_point(self):
        if self.x0 is not None:
            return self.x0
        center = getattr(self.Q, "center", None)
        if center is None:
            raise ValueError("problem needs x0 when Q has no centre")
        if self.A.in_shape == self.A.out_shape and self.A.in_domain == self.A.out_domain:
            return center
        return self.A.adjoint(center)


@dataclass
class SolveConfig:
    """Parameters of :func:`pnp_plo`.

    ``lambda_schedule`` is a constant or a callable ``k -> lambda_k``
    (k counts from 0). ``stop_tol`` is relative: iteration stops when
    ``||x^{k+1} - x^k||``, ``dist(A x^{k+1}, Q)`` and ``||T(x^{k+1}) - x^{k+1}||``
    all fall below ``stop_tol * max(1, ||x^0||)``; 0 disables it.
    ``override`` admits ``w`` and ``lambda_k`` outside their provable ranges
    and marks the trace as not covered by the convergence theory.
    """

    max_iters: int = 1000
    lambda_schedule: object = 1.0
    eps_relax: float = 1e-3
    w: float = 1.0
    step_rule: StepRule = field(default_factory=StepRule)
    stop_tol: float = 1e-9
    trace_every: int = 1
    keep_iterates: bool = False
    override: bool = False
    peak: float = 255.0
    record_timing: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.eps_relax < 1.0:
            raise ValueError("eps_relax must lie in (0, 1)")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")

    def lam(self, k):
        s = self.lambda_schedule
        return float(s(k)) if callable(s) else float(s)


@dataclass
class TraceRecord:
    k: int
    f: float
    residual: float
    step: float
    dist_Q: float
    denoiser_residual: float
    psnr: float = None
    wall_ms: float = None
    grad_norm: float = None
    misfit: float = None


@dataclass
class SolveTrace:
    """Per-iteration record of a solve.

    ``status`` is ``"converged"``, ``"max_iters"`` or ``"infeasible-direction"``.
    ``iterates`` holds ``x^0, x^1, ...`` when the solver kept them.
    ``theory_applies`` is false when parameters were overridden.
    """

    solver: str
    records: list = field(default_factory=list)
    iterates: list = None
    status: str = "max_iters"
    iterations: int = 0
    theory_applies: bool = True

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, stream=None, timing=True):
        """Write the trace CSV; returns the text when ``stream`` is None."""
        out = stream or io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            writer.writerow(
                [
                    r.k,
                    repr(r.f),
                    repr(r.residual),
                    repr(r.step),
                    repr(r.dist_Q),
                    repr(r.denoiser_residual),
                    "" if r.psnr is None else repr(r.psnr),
                    "" if (r.wall_ms is None or not timing) else repr(r.wall_ms),
                ]
            )
        if stream is None:
            return out.getvalue()
        return None


def _stop_threshold(stop_tol, x0):
    return stop_tol * max(1.0, norm2(x0))


def _feasible(problem, x, threshold):
    ax = problem.A.apply(x)
    if norm2(problem.Q.project(ax) - ax) > threshold:
        return False
    return norm2(problem.T(x) - x) <= threshold


def _drive(name, problem, x0, max_iters, update, *, stop_tol, trace_every, keep_iterates, peak, record_timing, theory_applies=True):
    """Shared iteration loop.

    ``update(k, x, ax, r)`` returns ``(x_next, step, g)`` where ``g = A* r``
    if it was computed (else ``None``).
    """
    A, Q, T = problem.A, problem.Q, problem.T
    center = getattr(Q, "center", None)
    trace = SolveTrace(name, iterates=[x0] if keep_iterates else None, theory_applies=theory_applies)
    threshold = _stop_threshold(stop_tol, x0)
    t0 = time.perf_counter()
    x = x0
    for k in range(max_iters):
        ax = A.apply(x)
        r = Q.project(ax) - ax
        try:
            x_next, step, g = update(k, x, ax, r)
        except StepStall:
            trace.status = "infeasible-direction"
            break
        res = norm2(x_next - x)
        if k % trace_every == 0 or k == max_iters - 1:
            nr = norm2(r)
            if g is None:
                g = A.adjoint(r)
            trace.records.append(
                TraceRecord(
                    k=k,
                    f=0.5 * nr * nr,
                    residual=res,
                    step=float(step),
                    dist_Q=nr,
                    denoiser_residual=norm2(T(x) - x),
                    psnr=problem.quality(x, peak),
                    wall_ms=(time.perf_counter() - t0) * 1e3 if record_timing else None,
                    grad_norm=norm2(g),
                    misfit=None if center is None else 0.5 * norm2(ax - center) ** 2,
                )
            )
        x = x_next
        trace.iterations = k + 1
        if keep_iterates:
            trace.iterates.append(x)
        # a short step alone can hide a large residual when A is ill-conditioned
        if res < threshold and _feasible(problem, x, threshold):
            trace.status = "converged"
            break
    return x, trace


def check_w(T, w, upper_factor=1.0, override=False):
    """Validate ``w`` against ``(0, upper_factor * (1 - alpha))``.

    Returns whether the convergence theory covers the run. Without an
    advertised alpha, or outside the interval, ``override`` is required.
    """
    if T.alpha is None:
        if not override:
            raise InvalidParameter("denoiser advertises no alpha; pass override=True to choose w yourself")
        return False
    lo, hi = admissible_w(T.alpha)
    hi *= upper_factor
    if lo < w < hi:
        return True
    if not override:
        raise InvalidParameter(f"w={w} outside admissible interval ({lo:g}, {hi:g}) for alpha={T.alpha:g}")
    return False


def pnp_plo(problem, config):
    """PnP with projected Landweber operator.

    Each iteration::

        v = (1 - lambda_k) x + lambda_k L_delta x
        x = w T(v) + (1 - w) v

    where ``L_delta`` is the extrapolated Landweber operator selected by
    ``config.step_rule``. The trace's ``step`` column holds ``delta`` (for
    the tau rule without a norm bound, the norm-free step ``mu``; for the
    Polyak rule, ``t``). Returns ``(x, trace)``.
    """
    A, Q, T = problem.A, problem.Q, problem.T
    w = config.w
    rule = config.step_rule
    if rule.kind == "diminishing":
        raise ValueError("diminishing is a step-size schedule, not an extrapolation rule")
    theory = check_w(T, w, override=config.override)
    need_norm = rule.kind == "constant" or (rule.kind == "tau" and A.norm_bound is not None)
    nsq = _norm_sq(A) if need_norm else None
    op_norm = 1.0 if nsq is None else nsq**0.5

    def lam_at(k):
        if rule.kind == "polyak":
            return 0.5
        lam = config.lam(k)
        if not config.eps_relax <= lam <= 1.0 and not config.override:
            raise InvalidParameter(f"lambda_{k}={lam} outside [{config.eps_relax}, 1]")
        return lam

    def update(k, x, ax, r):
        nonlocal theory
        lam = lam_at(k)
        if not config.eps_relax <= lam <= 1.0:
            theory = False
        if Q.contains(ax):
            v = x
            step = 1.0
            g = None
        else:
            g = A.adjoint(r)
            nr, ng = norm2(r), norm2(g)
            if ng < STALL_RTOL * op_norm * nr:
                raise StepStall("A* r vanishes")
            if rule.kind == "tau":
                m = (nr / ng) ** 2
                step = m if nsq is None else nsq * m
                v = x + (lam * m) * g
            elif rule.kind == "polyak":
                t = 0.5 * nr * nr / (ng * ng)
                step = t
                v = x + t * g
            else:
                delta = min(rule.value, nsq * (nr / ng) ** 2)
                step = delta
                v = x + (lam * delta / nsq) * g
        tv = T(v)
        return w * tv + (1.0 - w) * v, step, g

    x, trace = _drive(
        "pnp_plo",
        problem,
        problem.initial_point(),
        config.max_iters,
        update,
        stop_tol=config.stop_tol,
        trace_every=config.trace_every,
        keep_iterates=config.keep_iterates,
        peak=config.peak,
        record_timing=config.record_timing,
        theory_applies=theory,
    )
    trace.theory_applies = trace.theory_applies and theory
    return x, trace


def _gradient(A, r, fidelity_scale):
    g = A.adjoint(r)
    return g, -fidelity_scale * g


def red_sd(problem, mu, lambda_reg, max_iters, fidelity_scale=1.0, stop_tol=0.0, trace_every=1, keep_iterates=False, peak=255.0, record_timing=True):
    """RED by steepest descent: ``x - mu (grad f(x) + lambda (x - T(x)))``.

    ``fidelity_scale`` multiplies the gradient of ``f`` (for instance
    ``1 / sigma^2`` to use the noise-weighted fidelity).
    """
    if mu < 0 or lambda_reg < 0:
        raise ValueError("mu and lambda must be non-negative")
    A, T = problem.A, problem.T

    def update(k, x, ax, r):
        g, grad = _gradient(A, r, fidelity_scale)
        return x - mu * (grad + lambda_reg * (x - T(x))), mu, g

    return _drive(
        "red_sd", problem, problem.initial_point(), max_iters, update,
        stop_tol=stop_tol, trace_every=trace_every, keep_iterates=keep_iterates, peak=peak, record_timing=record_timing,
    )


def red_pro(problem, mu_schedule, w, max_iters, fidelity_scale=1.0, override=False, stop_tol=0.0, trace_every=1, keep_iterates=False, peak=255.0, record_timing=True):
    """RED-PRO by hybrid steepest descent: ``x_{k+1} = T_w(x_k - mu_k grad f(x_k))``.

    ``mu_schedule`` is a number, a :class:`StepRule` or a callable of
    ``k >= 1``; the first update uses ``mu_1``. ``w`` must lie in
    ``(0, (1 - alpha) / 2)`` unless ``override`` is set.
    """
    A, T = problem.A, problem.T
    theory = check_w(T, w, upper_factor=0.5, override=override)
    if isinstance(mu_schedule, StepRule):
        schedule = mu_schedule.mu
    elif callable(mu_schedule):
        schedule = mu_schedule
    else:
        schedule = lambda k, m=float(mu_schedule): m  # noqa: E731

    def update(k, x, ax, r):
        m = schedule(k + 1)
        g, grad = _gradient(A, r, fidelity_scale)
        u = x - m * grad
        return w * T(u) + (1.0 - w) * u, m, g

    return _drive(
        "red_pro", problem, problem.initial_point(), max_iters, update,
        stop_tol=stop_tol, trace_every=trace_every, keep_iterates=keep_iterates, peak=peak,
        record_timing=record_timing, theory_applies=theory,
    )


def pnp_fbs(problem, s, max_iters, fidelity_scale=1.0, stop_tol=0.0, trace_every=1, keep_iterates=False, peak=255.0, record_timing=True):
    """PnP forward-backward splitting: ``x_{k+1} = T(x_k - s grad f(x_k))``."""
    if s < 0:
        raise ValueError("step s must be non-negative")
    A, T = problem.A, problem.T

    def update(k, x, ax, r):
        g, grad = _gradient(A, r, fidelity_scale)
        return T(x - s * grad), s, g

    return _drive(
        "pnp_fbs", problem, problem.initial_point(), max_iters, update,
        stop_tol=stop_tol, trace_every=trace_every, keep_iterates=keep_iterates, peak=peak, record_timing=record_timing,
    )
