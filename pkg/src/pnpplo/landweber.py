"""Fidelity, Landweber operators and the adaptive step sizes.

Notation: ``r(x) = P_Q(Ax) - Ax`` is the projection residual in measurement
space, so ``f(x) = 0.5 ||r||^2`` and ``grad f(x) = -A* r``.
"""

from dataclasses import dataclass

from .operators import norm_sq as _norm_sq
from .tensor import norm2

# relative threshold under which A* r counts as vanishing
STALL_RTOL = 1e-14


class StepStall(ArithmeticError):
    """``Ax`` lies outside ``Q`` but ``A* r`` vanishes, so no step size is defined.

    This happens when the residual is orthogonal to the range of ``A``,
    which means the feasibility problem has no solution.
    """


def residual(A, Q, x):
    """Return ``(Ax, r)`` with ``r = P_Q(Ax) - Ax``."""
    ax = A.apply(x)
    return ax, Q.project(ax) - ax


def fidelity(A, Q, x):
    """``f(x) = 0.5 * ||Ax - P_Q(Ax)||^2``."""
    _, r = residual(A, Q, x)
    return 0.5 * norm2(r) ** 2


def grad_fidelity(A, Q, x):
    """``A*(Ax - P_Q(Ax))``."""
    _, r = residual(A, Q, x)
    return -A.adjoint(r)


def landweber_apply(A, Q, x, norm_sq=None):
    """Landweber operator ``x + A*(P_Q(Ax) - Ax) / ||A||^2``.

    ``norm_sq`` must bound ``||A||^2`` from above; by default it is the
    operator's exact bound.
    """
    if norm_sq is None:
        norm_sq = _norm_sq(A)
    if norm_sq <= 0:
        raise ValueError("norm_sq must be positive")
    _, r = residual(A, Q, x)
    return x + A.adjoint(r) / norm_sq


def _outside(Q, ax):
    return not Q.contains(ax)


def _check_stall(ng, nr, op_norm):
    if ng < STALL_RTOL * op_norm * nr:
        raise StepStall(f"A* r vanishes (|A* r| = {ng:.3e}, |r| = {nr:.3e})")


def mu(A, Q, x):
    """Norm-free step ``||r||^2 / ||A* r||^2``; ``None`` when ``Ax`` is in ``Q``."""
    ax, r = residual(A, Q, x)
    if not _outside(Q, ax):
        return None
    g = A.adjoint(r)
    nr, ng = norm2(r), norm2(g)
    _check_stall(ng, nr, 1.0 if A.norm_bound is None else A.norm_bound)
    return (nr / ng) ** 2


def tau(A, Q, x, norm_sq=None):
    """Extrapolation bound ``(||A|| ||r|| / ||A* r||)^2``, or 1 when ``Ax`` is in ``Q``.

    Always at least 1 (up to rounding) by Cauchy-Schwarz. Raises
    :class:`StepStall` when ``A* r`` vanishes for a nonzero residual.
    """
    ax, r = residual(A, Q, x)
    if not _outside(Q, ax):
        return 1.0
    if norm_sq is None:
        norm_sq = _norm_sq(A)
    g = A.adjoint(r)
    nr, ng = norm2(r), norm2(g)
    _check_stall(ng, nr, norm_sq**0.5)
    return norm_sq * (nr / ng) ** 2


def extrapolated_landweber_apply(A, Q, x, delta=None, norm_sq=None):
    """Extrapolated Landweber operator ``x + delta(x) (L x - x)``.

    With ``delta=None`` the extrapolation is ``tau(x)`` and the step is
    evaluated as ``x + mu(x) A* r``, which never touches ``||A||``. A numeric
    ``delta`` must lie in ``[1, tau(x)]``.
    """
    ax, r = residual(A, Q, x)
    if not _outside(Q, ax):
        return x
    g = A.adjoint(r)
    nr, ng = norm2(r), norm2(g)
    if delta is None:
        _check_stall(ng, nr, 1.0 if A.norm_bound is None else A.norm_bound)
        return x + (nr / ng) ** 2 * g
    if norm_sq is None:
        norm_sq = _norm_sq(A)
    _check_stall(ng, nr, norm_sq**0.5)
    t = norm_sq * (nr / ng) ** 2
    if not 1.0 - 1e-12 <= delta <= t + 1e-12 * max(1.0, t):
        raise ValueError(f"delta={delta} outside [1, tau(x)={t}]")
    return x + (delta / norm_sq) * g


def polyak_step(A, Q, x):
    """Polyak step ``f(x) / ||grad f(x)||^2`` with optimal value 0; 1 inside ``Q``."""
    ax, r = residual(A, Q, x)
    if not _outside(Q, ax):
        return 1.0
    g = A.adjoint(r)
    nr, ng = norm2(r), norm2(g)
    _check_stall(ng, nr, 1.0 if A.norm_bound is None else A.norm_bound)
    return 0.5 * nr**2 / ng**2


@dataclass(frozen=True)
class StepRule:
    """How the extrapolation (or step) is chosen each iteration.

    kind : {"tau", "polyak", "constant", "diminishing"}
        ``tau``: ``delta = tau(x)``, evaluated norm-free.
        ``polyak``: Polyak step ``t`` with ``delta = 2 ||A||^2 t`` and the
        relaxation fixed at 1/2, so the update is ``x - t grad f(x)``.
        ``constant``: ``delta = min(value, tau(x))``.
        ``diminishing``: ``mu_k = mu0 * k**(-exponent)``, for step-size
        schedules (k counts from 1).
    """

    kind: str = "tau"
    value: float = 1.0
    mu0: float = 1.0
    exponent: float = 0.1

    def __post_init__(self):
        if self.kind not in ("tau", "polyak", "constant", "diminishing"):
            raise ValueError(f"unknown step rule {self.kind!r}")
        if self.kind == "constant" and self.value < 1.0:
            raise ValueError("constant extrapolation must be at least 1")
        if self.kind == "diminishing" and not 0.0 < self.exponent <= 1.0:
            raise ValueError("diminishing exponent must lie in (0, 1]")

    def mu(self, k):
        """Step size ``mu_k`` for schedule kinds (``k >= 1``)."""
        if self.kind == "diminishing":
            return self.mu0 * k ** (-self.exponent)
        if self.kind == "constant":
            return self.value
        raise ValueError(f"step rule {self.kind!r} has no schedule")

    @classmethod
    def parse(cls, text):
        """Parse ``tau``, ``polyak``, ``constant:V`` or ``diminishing:MU0[:EXP]``."""
        parts = str(text).strip().split(":")
        kind = parts[0]
        if kind == "constant":
            return cls(kind, value=float(parts[1]) if len(parts) > 1 else 1.0)
        if kind == "diminishing":
            mu0 = float(parts[1]) if len(parts) > 1 else 1.0
            exp = float(parts[2]) if len(parts) > 2 else 0.1
            return cls(kind, mu0=mu0, exponent=exp)
        return cls(kind)

    def __str__(self):
        if self.kind == "constant":
            return f"constant:{self.value!r}"
        if self.kind == "diminishing":
            return f"diminishing:{self.mu0!r}:{self.exponent!r}"
        return self.kind
