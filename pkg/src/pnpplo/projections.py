"""Metric projections onto closed convex sets and the noise-radius rule."""

import math

import numpy as np

from .tensor import ShapeError, Signal, norm2


def radius_from_noise(n0, sigma, epsilon):
    """Ball radius ``epsilon * sqrt(n0 * sigma^2)`` for a noise level ``sigma``."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if n0 < 1:
        raise ValueError(f"n0 must be at least 1, got {n0}")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return epsilon * math.sqrt(n0 * sigma**2)


def epsilon_from_offset(n0, sigma, offset=0.2):
    """``(sqrt(n0 sigma^2) - offset) / sqrt(n0 sigma^2)``, the default radius factor."""
    s = math.sqrt(n0 * sigma**2)
    return (s - offset) / s


def default_tol(radius):
    return 1e-12 * (1.0 + radius)


class ConvexSet:
    """A closed convex set with a metric projection.

    Subclasses define ``kind``, ``shape`` and ``_project`` on raw arrays,
    plus ``_excess`` (signed distance past the boundary) used by membership tests.
    """

    kind = None
    radius = 0.0

    def _check(self, x):
        if x.shape != self.shape:
            raise ShapeError(f"{self.kind} set has shape {self.shape}, got {x.shape}")

    def project(self, x):
        self._check(x)
        return Signal._wrap(self._project(x.data), x.domain)

    def contains(self, x, tol=None):
        self._check(x)
        if tol is None:
            tol = default_tol(self.radius)
        return self._excess(x.data) <= tol


class L2Ball(ConvexSet):
    """``{z : ||z - center|| <= radius}``."""

    kind = "l2_ball"

    def __init__(self, center, radius):
        if radius < 0:
            raise ValueError("radius must be non-negative")
        self.center = center
        self.radius = float(radius)
        self.shape = center.shape

    def _project(self, x):
        d = x - self.center.data
        nd = float(np.linalg.norm(d))
        if nd <= self.radius:
            return x.copy()
        return self.center.data + (self.radius / nd) * d

    def _excess(self, x):
        return float(np.linalg.norm(x - self.center.data)) - self.radius


class Singleton(ConvexSet):
    kind = "singleton"

    def __init__(self, center):
        self.center = center
        self.shape = center.shape

    def _project(self, x):
        return self.center.data.copy()

    def _excess(self, x):
        return float(np.linalg.norm(x - self.center.data))


class L1Ball(ConvexSet):
    """``{z : ||z - center||_1 <= radius}``, projected by the sort-based method."""

    kind = "l1_ball"

    def __init__(self, center, radius):
        if radius < 0:
            raise ValueError("radius must be non-negative")
        self.center = center
        self.radius = float(radius)
        self.shape = center.shape

    def _project(self, x):
        d = (x - self.center.data).reshape(-1)
        return self.center.data + project_l1(d, self.radius).reshape(x.shape)

    def _excess(self, x):
        return float(np.abs(x - self.center.data).sum()) - self.radius


def project_l1(v, radius):
    """Euclidean projection of a vector onto the l1 ball of the given radius."""
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    if radius == 0:
        return np.zeros_like(v)
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, u.size + 1)
    rho = np.nonzero(u * idx > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


class Box(ConvexSet):
    kind = "box"

    def __init__(self, lower, upper, shape=None):
        if shape is None:
            shape = np.shape(lower) if np.ndim(lower) == 3 else np.shape(upper)
        self.shape = tuple(shape)
        self.lower = self._bound(lower)
        self.upper = self._bound(upper)
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")

    def _bound(self, value):
        arr = np.asarray(value, dtype=np.float64)
        # flat per-sample bounds are laid out like the signal data
        if arr.ndim and arr.size == int(np.prod(self.shape)):
            arr = arr.reshape(self.shape)
        return np.broadcast_to(arr, self.shape)

    def _project(self, x):
        return np.clip(x, self.lower, self.upper)

    def _excess(self, x):
        return float(max(np.max(self.lower - x), np.max(x - self.upper)))


def orthonormalize(vectors, drift_tol=1e-10):
    """Modified Gram-Schmidt on the columns of ``vectors``.

    A second pass runs when the result drifts from orthonormality by more
    than ``drift_tol``. Raises on (numerically) dependent columns.
    """
    q = np.array(vectors, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    for _ in range(3):
        for j in range(q.shape[1]):
            for i in range(j):
                q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
            nj = np.linalg.norm(q[:, j])
            if nj < 1e-12:
                raise ValueError("basis vectors are linearly dependent")
            q[:, j] /= nj
        if np.max(np.abs(q.T @ q - np.eye(q.shape[1]))) <= drift_tol:
            return q
    raise ValueError("could not orthonormalise basis")


class AffineSubspace(ConvexSet):
    """``offset + span(basis)``; ``basis`` rows (or a list of signals) span the directions."""

    kind = "affine_subspace"

    def __init__(self, basis, offset):
        self.shape = offset.shape
        self.offset = offset
        if isinstance(basis, (list, tuple)) and basis and isinstance(basis[0], Signal):
            cols = np.stack([b.vector() for b in basis], axis=1)
        else:
            cols = np.asarray(basis, dtype=np.float64).reshape(-1, offset.size).T
        self.basis = orthonormalize(cols)

    def _project(self, x):
        d = (x - self.offset.data).reshape(-1)
        return self.offset.data + (self.basis @ (self.basis.T @ d)).reshape(x.shape)

    def _excess(self, x):
        return float(np.linalg.norm(x - self._project(x)))


def project(Q, x):
    return Q.project(x)


def contains(Q, x, tol=None):
    """Tolerant membership; default ``tol = 1e-12 * (1 + radius)``."""
    return Q.contains(x, tol)


def dist(Q, x):
    return norm2(x - Q.project(x))
