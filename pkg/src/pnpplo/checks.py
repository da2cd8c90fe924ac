"""Feasibility oracle and convergence-theory checks for small instances.

The oracle projects exactly onto ``F = Fix(T) ∩ A^{-1}(Q)`` when ``Fix(T)``
is a subspace with a known orthonormal basis and ``Q`` is a Euclidean ball
or a single point. The projection onto a ball preimage reduces, after an
SVD, to a scalar secular equation in the Lagrange multiplier.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .projections import L2Ball, Singleton
from .tensor import Signal, norm2

# singular values below this fraction of the largest are treated as zero
RANK_RTOL = 1e-12
MAX_ALTERNATIONS = 100_000


class InfeasibleError(ArithmeticError):
    """The solution set ``F`` is empty (or numerically so)."""


def _ball_of(Q):
    if isinstance(Q, Singleton):
        return Q.center.vector(), 0.0
    if isinstance(Q, L2Ball):
        return Q.center.vector(), Q.radius
    raise NotImplementedError(f"oracle supports l2 balls and singletons, not {Q.kind}")


class BallPreimage:
    """Projector onto ``{z : ||M z - center|| <= radius}``.

    The thin SVD of ``M`` is computed once; for ``radius > 0`` the Lagrange
    multiplier is the root of a monotone secular function. Projection raises
    :class:`InfeasibleError` when the ball misses the range of ``M`` by more
    than ``atol``.
    """

    def __init__(self, M, center, radius, atol=1e-12):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.atol = atol
        u, s, vt = np.linalg.svd(np.asarray(M, dtype=np.float64), full_matrices=False)
        self.zero = s.size == 0 or s[0] == 0.0
        if not self.zero:
            keep = s > RANK_RTOL * s[0]
            u, s, vt = u[:, keep], s[keep], vt[keep]
        self.s, self.vt = s, vt
        self.b = u.T @ self.center
        self.gap = float(np.linalg.norm(self.center - u @ self.b))

    def project(self, z0):
        z0 = np.asarray(z0, dtype=np.float64)
        radius = self.radius
        if self.zero:
            if np.linalg.norm(self.center) > radius + self.atol:
                raise InfeasibleError("operator is zero and the ball misses the origin")
            return z0.copy()
        s, b, gap = self.s, self.b, self.gap
        a = self.vt @ z0
        e = s * a - b
        s2 = s * s

        def excess(nu):
            return math.sqrt(float(np.sum((e / (1.0 + nu * s2)) ** 2)) + gap * gap) - radius

        if excess(0.0) <= 0.0:
            return z0.copy()
        if gap > radius + self.atol:
            raise InfeasibleError(f"ball (radius {radius:g}) lies {gap - radius:.3e} away from the range")
        hi = 1.0
        while radius > 0.0 and excess(hi) > 0.0 and hi < 1e300:
            hi *= 16.0
        if radius == 0.0 or excess(hi) > 0.0:
            # point target, or a ball that only touches the range: least-squares limit
            a_new = b / s
        else:
            nu = brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
            a_new = (a + nu * s * b) / (1.0 + nu * s2)
        return z0 + self.vt.T @ (a_new - a)


def project_preimage(M, center, radius, z0, atol=1e-12):
    """Project ``z0`` onto ``{z : ||M z - center|| <= radius}``."""
    return BallPreimage(M, center, radius, atol).project(z0)


@dataclass
class SolutionSet:
    """Exact projector onto ``F`` for a small problem."""

    problem: object
    atol: float = 1e-12

    def __post_init__(self):
        p = self.problem
        matrix = p.A.to_matrix()
        center, radius = _ball_of(p.Q)
        self._basis = p.T.oracle.basis
        if self._basis is None and p.T.oracle._projector is None:
            raise NotImplementedError("denoiser exposes no projector onto Fix(T)")
        M = matrix if self._basis is None else matrix @ self._basis
        self._preimage = BallPreimage(M, center, radius, self.atol)
        self._shape = p.A.in_shape
        self._domain = p.A.in_domain

    def project_vector(self, v, tol=1e-12):
        if self._basis is not None:
            return self._basis @ self._preimage.project(self._basis.T @ v)
        return self._dykstra(v, tol)

    def _fix_project(self, v):
        return self.problem.T.oracle._projector(v.reshape(self._shape)).reshape(-1)

    def _dykstra(self, v, tol):
        x = v.copy()
        p = np.zeros_like(x)
        q = np.zeros_like(x)
        for _ in range(MAX_ALTERNATIONS):
            y = self._fix_project(x + p)
            p = x + p - y
            x_new = self._preimage.project(y + q)
            q = y + q - x_new
            moved = np.linalg.norm(x_new - x)
            x = x_new
            if moved < tol * 1e-2 and np.linalg.norm(x - self._fix_project(x)) <= tol:
                return x
        raise InfeasibleError("alternating projections did not settle; F may be empty")

    def project(self, x, tol=1e-12):
        out = self.project_vector(x.vector(), tol)
        return Signal._wrap(out.reshape(self._shape), self._domain)

    def distance(self, x, tol=1e-12):
        return norm2(x - self.project(x, tol))


def project_solution_set(problem, x, tol=1e-12):
    return SolutionSet(problem).project(x, tol)


def distance_to_solution_set(problem, x, tol=1e-12):
    """``d(x, F)`` computed with the exact projector."""
    return SolutionSet(problem).distance(x, tol)


def oracle_feasible_point(problem, tol=1e-9, start=None):
    """A certified point of ``F``: the projection of ``start`` (default ``x0``).

    Certification: ``||T(x) - x|| <= tol`` and ``dist(Ax, Q) <= tol``.
    Raises :class:`InfeasibleError` if ``F`` is empty or certification fails.
    """
    start = problem.initial_point() if start is None else start
    x = SolutionSet(problem).project(start, tol)
    fix_gap = norm2(problem.T(x) - x)
    ax = problem.A.apply(x)
    q_gap = norm2(ax - problem.Q.project(ax))
    if fix_gap > tol or q_gap > tol:
        raise InfeasibleError(f"oracle point not certified: |T(x)-x|={fix_gap:.3e}, dist(Ax,Q)={q_gap:.3e}")
    return x


def fejer_constant(alpha, w):
    """``c = min(1, (1 - alpha - w) / w) / 2``, clipped at 0 outside the admissible range."""
    return max(0.0, min(1.0, (1.0 - alpha - w) / w) / 2.0)


@dataclass
class FejerReport:
    passed: bool
    worst_margin: float
    violations: list
    c: float
    steps: int


def check_fejer(iterates, reference, alpha, w, rtol=1e-9):
    """Check ``||x+ - x*||^2 <= ||x - x*||^2 - c ||x+ - x||^2`` at every step.

    A margin below ``-rtol * (1 + ||x0 - x*||^2)`` counts as a violation.
    """
    c = fejer_constant(alpha, w)
    d = [norm2(x - reference) ** 2 for x in iterates]
    slack = rtol * (1.0 + d[0])
    worst = math.inf
    bad = []
    for k in range(len(iterates) - 1):
        step = norm2(iterates[k + 1] - iterates[k]) ** 2
        margin = d[k] - c * step - d[k + 1]
        worst = min(worst, margin)
        if margin < -slack:
            bad.append(k)
    if worst == math.inf:
        worst = 0.0
    return FejerReport(not bad, worst, bad, c, len(iterates) - 1)


@dataclass
class RateBoundReport:
    """Outcome of :func:`check_rate_bounds`.

    ``partial_sum_violations`` lists k where
    ``(k+1) c min_{i<=k} ||x^{i+1}-x^i||^2 > ||x0 - x*||^2``;
    ``polyak_violations`` lists k where ``f_best^k > L_f d0 / sqrt(k+1)``
    (empty when the Polyak clause was not requested).
    """

    partial_sum_violations: list
    summable: bool
    polyak_violations: list
    lipschitz: float
    passed: bool


def check_rate_bounds(trace, d0_sq, alpha, w, polyak=False, d_opt=None, rtol=1e-9):
    """Check the partial-sum and Polyak bounds on a trace recorded every step.

    Parameters
    ----------
    trace : SolveTrace
        Must have ``trace_every=1``.
    d0_sq : float
        ``||x0 - x*||^2`` for a certified ``x*``.
    polyak : bool
        Also check ``f_best^k <= L_f d(x0, X*) / sqrt(k+1)`` with ``L_f`` the
        largest observed gradient norm.
    d_opt : float, optional
        ``d(x0, X*)``; defaults to ``sqrt(d0_sq)``.
    """
    recs = trace.records
    ks = [r.k for r in recs]
    if ks != list(range(len(recs))):
        raise ValueError("rate bounds need a trace recorded at every iteration")
    c = fejer_constant(alpha, w)
    slack = rtol * (1.0 + d0_sq)
    ps_bad = []
    best_step = math.inf
    total = 0.0
    for r in recs:
        s2 = r.residual**2
        best_step = min(best_step, s2)
        total += s2
        if (r.k + 1) * c * best_step > d0_sq + slack:
            ps_bad.append(r.k)
    summable = c * total <= d0_sq + slack
    pk_bad = []
    lf = max((r.grad_norm for r in recs), default=0.0)
    if polyak:
        d = math.sqrt(d0_sq) if d_opt is None else d_opt
        f_best = math.inf
        for r in recs:
            f_best = min(f_best, r.f)
            if f_best > lf * d / math.sqrt(r.k + 1) * (1.0 + rtol) + rtol:
                pk_bad.append(r.k)
    return RateBoundReport(ps_bad, summable, pk_bad, lf, not ps_bad and summable and not pk_bad)


@dataclass
class RateReport:
    """Empirical linear rate ``q`` with ``d(x^{k+1}, F) <= q d(x^k, F)``.

    ``q`` is ``exp`` of the least-squares slope of ``log d_k`` over
    ``window``; ``residual`` is the RMS deviation of the fit in log units.
    The existence constants behind the theoretical rate are not computed.
    ``flagged`` marks a stalled sequence (``q >= 1``).
    """

    q: float
    residual: float
    window: tuple
    flagged: bool


def fit_linear_rate(distances, tail_fraction=0.5, floor=1e-14):
    """Fit ``d_k ~ C q^k`` on the tail of ``distances``.

    The sequence is cut at the first value below ``floor``; the window is
    the last ``tail_fraction`` of what remains, and at least two points.
    """
    d = np.asarray(distances, dtype=np.float64)
    below = np.nonzero(d < floor)[0]
    end = int(below[0]) if below.size else d.size
    if end < 2:
        raise ValueError("need at least two distances above the floor")
    start = min(end - 2, int(math.floor(end * (1.0 - tail_fraction))))
    k = np.arange(start, end, dtype=np.float64)
    logd = np.log(d[start:end])
    slope, intercept = np.polyfit(k, logd, 1)
    fit = slope * k + intercept
    residual = float(np.sqrt(np.mean((logd - fit) ** 2)))
    q = float(math.exp(slope))
    return RateReport(q, residual, (start, end), q >= 1.0 - 1e-12)
