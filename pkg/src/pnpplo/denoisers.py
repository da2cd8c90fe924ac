"""Denoisers used as fixed-point priors.

A denoiser ``T`` may advertise a demicontraction constant ``alpha < 1``::

    ||T(x) - y||^2 <= ||x - y||^2 + alpha * ||T(x) - x||^2   for y in Fix(T).

The built-ins are chosen so that ``alpha`` is provable: projections and
proximal maps have ``alpha = -1`` and reflections ``alpha = 0``. Each one
ships a :class:`FixedPointOracle` that can draw points of ``Fix(T)`` and
project onto it exactly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .projections import orthonormalize
from .rng import Xoshiro256
from .tensor import ShapeError, Signal, inner, norm2


class FixedPointOracle:
    """Access to ``Fix(T)`` for testing.

    Parameters
    ----------
    sampler : callable, optional
        ``sampler(gen) -> ndarray`` drawing a point of ``Fix(T)``.
    projector : callable, optional
        Exact metric projection onto ``Fix(T)`` on raw arrays.
    basis : ndarray, optional
        Orthonormal columns spanning ``Fix(T)`` when it is a linear subspace
        small enough to hold densely.

    An oracle built with no arguments is the "unknown" marker.
    """

    def __init__(self, shape=None, sampler=None, projector=None, basis=None):
        self.shape = shape
        self._sampler = sampler
        self._projector = projector
        self.basis = basis

    @property
    def known(self):
        return self._sampler is not None

    def sample(self, gen):
        if not self.known:
            raise ValueError("fixed-point set of this denoiser is unknown")
        return Signal(self._sampler(gen).reshape(self.shape))

    def project(self, x):
        if self._projector is None:
            raise ValueError("no exact projector onto Fix(T) is available")
        return x.like(self._projector(x.data))

    @classmethod
    def unknown(cls):
        return cls()

    @classmethod
    def for_subspace(cls, basis, shape):
        """Oracle for ``Fix(T) = span(basis)`` with orthonormal columns."""
        k = basis.shape[1]

        def sampler(gen):
            if k == 0:
                return np.zeros(shape)
            return basis @ gen.standard_normal(k)

        def projector(x):
            v = x.reshape(-1)
            return (basis @ (basis.T @ v)).reshape(x.shape)

        return cls(shape, sampler, projector, basis)


class Denoiser:
    """Base denoiser.

    Subclasses implement ``_denoise`` on float64 arrays of ``shape``. A
    denoiser with ``shape=None`` accepts any shape. Multi-channel inputs
    whose channel count is a multiple of ``shape[2]``, and all complex-tagged
    inputs, are processed one channel plane at a time.
    """

    alpha = None
    shape = None
    sigma_f = None
    oracle = FixedPointOracle.unknown()

    def denoise(self, x):
        if x.is_complex or (self.shape is not None and x.shape != self.shape):
            return x.like(self._planewise(x))
        return x.like(self._denoise(x.data))

    __call__ = denoise

    def _planewise(self, x):
        rows, cols, ch = x.shape
        if self.shape is not None:
            if (rows, cols) != self.shape[:2] or self.shape[2] != 1:
                raise ShapeError(f"denoiser expects shape {self.shape}, got {x.shape}")
        out = np.empty(x.shape)
        for j in range(ch):
            out[:, :, j : j + 1] = self._denoise(np.ascontiguousarray(x.data[:, :, j : j + 1]))
        return out

    def _denoise(self, x):
        raise NotImplementedError

    def close(self):
        pass


class SubspaceDenoiser(Denoiser):
    """Orthogonal projection onto ``span(basis)``; ``alpha = -1``."""

    alpha = -1.0

    def __init__(self, basis, shape, sigma_f=None):
        self.shape = tuple(shape)
        n = int(np.prod(self.shape))
        b = np.asarray(basis, dtype=np.float64)
        if b.ndim == 1:
            b = b[:, None]
        if b.shape[0] != n:
            b = b.reshape(-1, n).T
        self.basis = orthonormalize(b)
        self.sigma_f = sigma_f
        self.oracle = FixedPointOracle.for_subspace(self.basis, self.shape)

    def _denoise(self, x):
        v = x.reshape(-1)
        return (self.basis @ (self.basis.T @ v)).reshape(x.shape)


class ReflectionDenoiser(SubspaceDenoiser):
    """Reflection ``2P - Id`` through a subspace: nonexpansive, ``alpha = 0``."""

    alpha = 0.0

    def _denoise(self, x):
        return 2.0 * super()._denoise(x) - x


class LinearDenoiser(Denoiser):
    """``x -> W x`` for symmetric ``W`` with spectrum in ``[0, 1]`` (firmly nonexpansive)."""

    alpha = -1.0

    def __init__(self, matrix, shape=None, sigma_f=None, tol=1e-10):
        w = np.array(matrix, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError("W must be a square matrix")
        scale = max(1.0, float(np.abs(w).max()))
        if np.max(np.abs(w - w.T)) > tol * scale:
            raise ValueError("W must be symmetric")
        evals, evecs = np.linalg.eigh(w)
        if evals.min() < -tol or evals.max() > 1.0 + tol:
            raise ValueError(f"spectrum of W must lie in [0, 1], got [{evals.min():.3g}, {evals.max():.3g}]")
        self.matrix = w
        self.shape = tuple(shape) if shape is not None else (w.shape[0], 1, 1)
        self.sigma_f = sigma_f
        fix = evecs[:, np.abs(evals - 1.0) <= tol]
        self.oracle = FixedPointOracle.for_subspace(fix, self.shape)

    def _denoise(self, x):
        return (self.matrix @ x.reshape(-1)).reshape(x.shape)


def _soft(c, theta):
    return np.sign(c) * np.maximum(np.abs(c) - theta, 0.0)


class SoftThresholdDenoiser(Denoiser):
    """Soft-thresholding of the coefficients along orthonormal columns ``basis``.

    ``T(x) = x + B (soft(B^T x, theta) - B^T x)``, the proximal map of
    ``theta * ||B^T x||_1``; the component orthogonal to ``span(B)`` passes
    through. ``Fix(T)`` is that orthogonal complement. ``alpha = -1``.
    """

    alpha = -1.0

    def __init__(self, basis, theta, shape=None):
        b = orthonormalize(np.asarray(basis, dtype=np.float64))
        if theta < 0:
            raise ValueError("threshold must be non-negative")
        self.basis = b
        self.theta = float(theta)
        self.sigma_f = float(theta)
        self.shape = tuple(shape) if shape is not None else (b.shape[0], 1, 1)
        n = b.shape[0]
        # complement basis from the full QR of B
        q, _ = np.linalg.qr(b, mode="complete")
        comp = q[:, b.shape[1] :] if b.shape[1] < n else np.zeros((n, 0))
        self.oracle = FixedPointOracle.for_subspace(comp, self.shape)

    def _denoise(self, x):
        v = x.reshape(-1)
        c = self.basis.T @ v
        return (v + self.basis @ (_soft(c, self.theta) - c)).reshape(x.shape)


def dct_lowpass_mask(rows, cols, keep):
    """Boolean mask of the ``keep x keep`` lowest-frequency DCT coefficients."""
    m = np.zeros((rows, cols), dtype=bool)
    m[: min(keep, rows), : min(keep, cols)] = True
    return m


class DCTDenoiser(Denoiser):
    """Image denoiser in the orthonormal 2-D DCT basis.

    The ``keep x keep`` low-frequency block passes unchanged. With
    ``mode="project"`` all other coefficients are zeroed (a subspace
    projection); with ``mode="soft"`` they are soft-thresholded by ``theta``
    (a proximal map). Both have ``Fix(T)`` equal to the low-frequency span
    and ``alpha = -1``.
    """

    alpha = -1.0

    def __init__(self, shape, keep, mode="soft", theta=1.0):
        if len(shape) == 2:
            shape = tuple(shape) + (1,)
        self.shape = tuple(shape)
        if mode not in ("soft", "project"):
            raise ValueError(f"unknown DCT denoiser mode {mode!r}")
        self.mode = mode
        self.keep = int(keep)
        self.theta = float(theta)
        self.sigma_f = self.theta if mode == "soft" else float(self.keep)
        rows, cols = self.shape[:2]
        self.low = dct_lowpass_mask(rows, cols, self.keep)[:, :, None]
        shape3 = self.shape

        def sampler(gen):
            c = np.where(self.low, gen.standard_normal(shape3), 0.0)
            return idctn(c, axes=(0, 1), norm="ortho")

        self.oracle = FixedPointOracle(self.shape, sampler, self._project_low)

    def _project_low(self, x):
        c = dctn(x, axes=(0, 1), norm="ortho")
        return idctn(np.where(self.low, c, 0.0), axes=(0, 1), norm="ortho")

    def _denoise(self, x):
        c = dctn(x, axes=(0, 1), norm="ortho")
        if self.mode == "project":
            c = np.where(self.low, c, 0.0)
        else:
            c = np.where(self.low, c, _soft(c, self.theta))
        return idctn(c, axes=(0, 1), norm="ortho")


class RelaxedDenoiser(Denoiser):
    """``T_w = w T + (1 - w) Id``; same fixed points as ``T``."""

    def __init__(self, base, w):
        self.base = base
        self.w = float(w)
        self.shape = base.shape
        self.sigma_f = base.sigma_f
        self.oracle = base.oracle
        # T_w is (1 - alpha - w)/w strongly quasi-nonexpansive
        self.alpha = None if base.alpha is None else (base.alpha + self.w - 1.0) / self.w

    def denoise(self, x):
        return self.w * self.base.denoise(x) + (1.0 - self.w) * x

    __call__ = denoise


def admissible_w(alpha):
    """Open interval of relaxation weights ``(0, 1 - alpha)`` for an alpha-demicontraction."""
    return (0.0, 1.0 - alpha)


def relax(T, w, override=False):
    """Relaxed denoiser ``w T + (1 - w) Id``.

    When ``T`` advertises ``alpha`` the weight must lie in ``(0, 1 - alpha)``
    unless ``override`` is set.
    """
    if w <= 0 and not override:
        raise ValueError(f"relaxation weight must be positive, got {w}")
    if T.alpha is not None and not override:
        lo, hi = admissible_w(T.alpha)
        if not lo < w < hi:
            raise ValueError(f"w={w} outside admissible interval ({lo:g}, {hi:g}) for alpha={T.alpha:g}")
    return RelaxedDenoiser(T, w)


@dataclass
class AlphaEstimate:
    """Result of :func:`estimate_alpha`.

    ``alpha`` is ``None`` when every pair was skipped, i.e. ``T`` acted as the
    identity on all samples (``identity_on_samples`` is then true).
    """

    alpha: float
    pairs: int
    skipped: int
    identity_on_samples: bool = False


def spc_ratio(T, x, y, tx=None):
    """``(||T(x)-y||^2 - ||x-y||^2) / ||T(x)-x||^2``, or ``None`` when ``T(x) ~ x``."""
    tx = T(x) if tx is None else tx
    den = norm2(tx - x) ** 2
    if np.sqrt(den) < 1e-12 * (1.0 + norm2(x)):
        return None
    return (norm2(tx - y) ** 2 - norm2(x - y) ** 2) / den


def spc_margin(T, x, y, alpha, tx=None):
    """Slack of the demicontraction inequality; non-negative when it holds."""
    tx = T(x) if tx is None else tx
    return norm2(x - y) ** 2 + alpha * norm2(tx - x) ** 2 - norm2(tx - y) ** 2


def estimate_alpha(T, samples, fix_oracle=None, count=1, seed=0, quantile=None):
    """Empirical demicontraction constant.

    Each sample ``x`` is paired with ``count`` fixed points drawn from the
    oracle. The estimate is the largest ratio over all pairs, or the given
    ``quantile`` of the ratios (useful for noisy external denoisers).
    """
    oracle = fix_oracle or T.oracle
    if not oracle.known:
        raise ValueError("estimate_alpha needs a fixed-point oracle")
    if count < 1:
        raise ValueError("count must be at least 1")
    gen = Xoshiro256(seed)
    ratios = []
    skipped = 0
    for x in samples:
        tx = T(x)
        for _ in range(count):
            y = oracle.sample(gen)
            r = spc_ratio(T, x, y, tx=tx)
            if r is None:
                skipped += 1
            else:
                ratios.append(r)
    if not ratios:
        return AlphaEstimate(alpha=None, pairs=skipped, skipped=skipped, identity_on_samples=True)
    value = max(ratios) if quantile is None else float(np.quantile(ratios, quantile))
    return AlphaEstimate(alpha=float(value), pairs=len(ratios) + skipped, skipped=skipped)


def sample_signals(shape, count, seed=0, scales=(1e-3, 1e2)):
    """Gaussian test signals with log-uniformly spread amplitudes."""
    gen = Xoshiro256(seed)
    lo, hi = np.log(scales[0]), np.log(scales[1])
    out = []
    for _ in range(count):
        s = np.exp(lo + (hi - lo) * gen.random())
        out.append(Signal(s * gen.standard_normal(shape)))
    return out


def red_value(T, x):
    """RED regulariser ``0.5 * <x, x - T(x)>``."""
    return 0.5 * inner(x, x - T(x))


def build_subspace_denoiser(basis, shape, sigma_f=None):
    return SubspaceDenoiser(basis, shape, sigma_f=sigma_f)


def build_reflection_denoiser(basis, shape):
    return ReflectionDenoiser(basis, shape)


def build_linear_denoiser(matrix, shape=None, sigma_f=None):
    return LinearDenoiser(matrix, shape=shape, sigma_f=sigma_f)


def build_soft_threshold_denoiser(basis, theta, shape=None):
    return SoftThresholdDenoiser(basis, theta, shape=shape)


def build_dct_denoiser(shape, keep, mode="soft", theta=1.0):
    return DCTDenoiser(shape, keep, mode=mode, theta=theta)
