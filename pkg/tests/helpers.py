"""Seeded random SCFP instances shared by the test modules."""

import numpy as np

from pnpplo.denoisers import SubspaceDenoiser
from pnpplo.operators import build_dense
from pnpplo.projections import L2Ball, Singleton
from pnpplo.solvers import SCFPProblem
from pnpplo.tensor import Signal


def random_instance(seed, max_dim=32, singleton=False, margin=0.8):
    """Dense A, subspace-projection T and a ball Q around ``A x_true + e``.

    ``x_true`` lies in Fix(T) and ``||e|| = margin * radius``, so F is
    nonempty and contains ``x_true``. With ``singleton`` the ball collapses
    to ``{A x_true}``.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, max_dim + 1))
    m = int(rng.integers(2, max_dim + 1))
    p = int(rng.integers(1, n))
    M = rng.standard_normal((m, n))
    A = build_dense(M)
    T = SubspaceDenoiser(rng.standard_normal((n, p)), (n, 1, 1))
    x_true = Signal(T.basis @ rng.standard_normal(p))
    clean = A(x_true)
    if singleton:
        Q = Singleton(clean)
    else:
        radius = 0.5 + rng.random()
        e = rng.standard_normal(m)
        e *= margin * radius / np.linalg.norm(e)
        Q = L2Ball(clean + Signal(e), radius)
    x0 = Signal(5.0 * rng.standard_normal(n))
    return SCFPProblem(A, Q, T, x0=x0), x_true


def two_by_two():
    """A = diag(1, 2), Q = B((1, 2), 0.1), T = projection onto span{(1, 1)}."""
    A = build_dense(np.diag([1.0, 2.0]))
    Q = L2Ball(Signal(np.array([1.0, 2.0])), 0.1)
    T = SubspaceDenoiser(np.array([1.0, 1.0]), (2, 1, 1))
    return SCFPProblem(A, Q, T, x0=Signal(np.array([3.0, -1.0])))
