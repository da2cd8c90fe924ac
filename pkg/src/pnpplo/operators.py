"""Bounded linear operators of the inverse problem, with adjoints and norms.

Every convolution is circular, which keeps the operators exactly circulant:
their norms are known in closed form from the kernel's DFT and the adjoint
identity holds to rounding error.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256
from .tensor import COMPLEX, REAL, ShapeError, Signal, inner, norm2

# convolutions switch to the FFT path once both image dims reach this size
FFT_MIN_SIZE = 32


def _as_shape(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) == 1:
        shape = (shape[0], 1, 1)
    elif len(shape) == 2:
        shape = shape + (1,)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeError(f"invalid signal shape {shape}")
    return shape


class LinearOperator:
    """Base class: ``apply`` maps ``in_shape`` to ``out_shape``, ``adjoint`` back.

    Subclasses implement ``_apply`` and ``_adjoint`` on raw float64 arrays.
    ``norm_bound`` is an upper bound on the operator norm (exact for all the
    operators shipped here) or ``None`` when unknown.
    """

    in_domain = REAL
    out_domain = REAL

    def __init__(self, in_shape, out_shape, norm_bound=None):
        self.in_shape = _as_shape(in_shape)
        self.out_shape = _as_shape(out_shape)
        self.norm_bound = None if norm_bound is None else float(norm_bound)

    def apply(self, x):
        if x.shape != self.in_shape:
            raise ShapeError(f"{type(self).__name__} expects input shape {self.in_shape}, got {x.shape}")
        return Signal._wrap(self._apply(x.data), self.out_domain)

    def adjoint(self, u):
        if u.shape != self.out_shape:
            raise ShapeError(f"{type(self).__name__} adjoint expects shape {self.out_shape}, got {u.shape}")
        return Signal._wrap(self._adjoint(u.data), self.in_domain)

    __call__ = apply

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, u):
        raise NotImplementedError

    def to_matrix(self):
        """Dense matrix of the operator acting on flattened signals."""
        n = int(np.prod(self.in_shape))
        cols = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            cols.append(self._apply(e.reshape(self.in_shape)).reshape(-1))
        return np.stack(cols, axis=1)


class IdentityOperator(LinearOperator):
    def __init__(self, shape, domain=REAL):
        super().__init__(shape, shape, norm_bound=1.0)
        self.in_domain = self.out_domain = domain

    def _apply(self, x):
        return x.copy()

    _adjoint = _apply


class MatrixOperator(LinearOperator):
    """Multiplication of the flattened signal by a dense matrix ``M``."""

    def __init__(self, matrix, in_shape=None, out_shape=None):
        m = np.array(matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError("matrix must be 2-D")
        in_shape = _as_shape(in_shape or (m.shape[1],))
        out_shape = _as_shape(out_shape or (m.shape[0],))
        if np.prod(in_shape) != m.shape[1] or np.prod(out_shape) != m.shape[0]:
            raise ShapeError(f"matrix {m.shape} incompatible with shapes {in_shape} -> {out_shape}")
        super().__init__(in_shape, out_shape, norm_bound=np.linalg.norm(m, 2) if m.size else 0.0)
        m.flags.writeable = False
        self.matrix = m

    def _apply(self, x):
        return (self.matrix @ x.reshape(-1)).reshape(self.out_shape)

    def _adjoint(self, u):
        return (self.matrix.T @ u.reshape(-1)).reshape(self.in_shape)

    def to_matrix(self):
        return self.matrix.copy()


def _check_kernel(kernel):
    k = np.array(kernel, dtype=np.float64)
    if k.ndim != 2:
        raise ValueError("kernel must be a 2-D array")
    if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {k.shape}")
    return k


def kernel_symbol(kernel, rows, cols):
    """DFT of the kernel wrapped onto a ``rows x cols`` grid, centre at (0, 0)."""
    k = _check_kernel(kernel)
    kh, kw = k.shape
    ii = (np.arange(kh) - kh // 2) % rows
    jj = (np.arange(kw) - kw // 2) % cols
    embedded = np.zeros((rows, cols))
    np.add.at(embedded, (ii[:, None], jj[None, :]), k)
    return np.fft.fft2(embedded)


class CircularConvolution(LinearOperator):
    """Periodic-boundary 2-D convolution, applied to each channel.

    ``method`` selects ``"direct"`` (shifted sums), ``"fft"`` or ``"auto"``,
    which uses the FFT once both image dimensions are at least 32.
    """

    def __init__(self, kernel, shape, method="auto"):
        shape = _as_shape(shape)
        self.kernel = _check_kernel(kernel)
        self.kernel.flags.writeable = False
        rows, cols = shape[:2]
        self.symbol = kernel_symbol(self.kernel, rows, cols)
        if method == "auto":
            method = "fft" if min(rows, cols) >= FFT_MIN_SIZE else "direct"
        if method not in ("direct", "fft"):
            raise ValueError(f"unknown convolution method {method!r}")
        self.method = method
        super().__init__(shape, shape, norm_bound=float(np.max(np.abs(self.symbol))))

    def _shifted_sum(self, x, sign):
        kh, kw = self.kernel.shape
        out = np.zeros_like(x)
        for a in range(kh):
            for b in range(kw):
                w = self.kernel[a, b]
                if w != 0.0:
                    out += w * np.roll(x, (sign * (a - kh // 2), sign * (b - kw // 2)), axis=(0, 1))
        return out

    def _fft_filter(self, x, symbol):
        xf = np.fft.fft2(x, axes=(0, 1))
        return np.real(np.fft.ifft2(xf * symbol[:, :, None], axes=(0, 1)))

    def _apply(self, x):
        if self.method == "direct":
            return self._shifted_sum(x, 1)
        return self._fft_filter(x, self.symbol)

    def _adjoint(self, u):
        if self.method == "direct":
            return self._shifted_sum(u, -1)
        return self._fft_filter(u, np.conj(self.symbol))


class DownsampleBlur(LinearOperator):
    """Circular blur followed by keeping every ``scale``-th pixel in each axis."""

    def __init__(self, kernel, shape, scale, method="auto"):
        shape = _as_shape(shape)
        scale = int(scale)
        if scale < 1:
            raise ValueError("scale must be a positive integer")
        rows, cols, ch = shape
        if rows % scale or cols % scale:
            raise ShapeError(f"image dims {rows}x{cols} not divisible by scale {scale}")
        self.scale = scale
        self.blur = CircularConvolution(kernel, shape, method=method)
        # S C C* S* is circulant on the coarse grid with the aliased symbol
        power = np.abs(self.blur.symbol) ** 2
        folded = power.reshape(scale, rows // scale, scale, cols // scale).sum(axis=(0, 2)) / scale**2
        super().__init__(shape, (rows // scale, cols // scale, ch), norm_bound=float(np.sqrt(folded.max())))

    def _apply(self, x):
        return self.blur._apply(x)[:: self.scale, :: self.scale].copy()

    def _adjoint(self, u):
        up = np.zeros(self.in_shape)
        up[:: self.scale, :: self.scale] = u
        return self.blur._adjoint(up)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean k-space mask in unshifted FFT layout (DC cell at ``[0, 0]``).

    ``fraction`` is the realised fraction of true cells; ``requested`` is the
    fraction that was asked for.
    """

    grid: np.ndarray
    fraction: float
    kind: str
    seed: int
    requested: float

    @property
    def count(self):
        return int(self.grid.sum())


class MaskedFourier(LinearOperator):
    """Unitary 2-D DFT followed by selection of the sampled k-space cells.

    Input is a complex-tagged ``(rows, cols, 2c)`` image; output is the
    complex-tagged ``(k, 1, 2c)`` list of sampled coefficients in row-major
    order of the mask. The adjoint zero-fills and applies the inverse DFT.
    """

    in_domain = COMPLEX
    out_domain = COMPLEX

    def __init__(self, mask, channels=1):
        grid = mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
        if grid.ndim != 2:
            raise ShapeError("mask grid must be 2-D")
        k = int(grid.sum())
        if k == 0:
            raise ValueError("mask samples no k-space cells")
        self.grid = grid.copy()
        self.grid.flags.writeable = False
        self.channels = int(channels)
        rows, cols = grid.shape
        super().__init__((rows, cols, 2 * self.channels), (k, 1, 2 * self.channels), norm_bound=1.0)

    def _apply(self, x):
        z = x[:, :, 0::2] + 1j * x[:, :, 1::2]
        zf = np.fft.fft2(z, axes=(0, 1), norm="ortho")[self.grid]
        out = np.empty(self.out_shape)
        out[:, 0, 0::2] = zf.real
        out[:, 0, 1::2] = zf.imag
        return out

    def _adjoint(self, u):
        rows, cols, _ = self.in_shape
        zf = np.zeros((rows, cols, self.channels), dtype=complex)
        zf[self.grid] = u[:, 0, 0::2] + 1j * u[:, 0, 1::2]
        z = np.fft.ifft2(zf, axes=(0, 1), norm="ortho")
        out = np.empty(self.in_shape)
        out[:, :, 0::2] = z.real
        out[:, :, 1::2] = z.imag
        return out


def build_identity(shape, domain=REAL):
    return IdentityOperator(shape, domain=domain)


def build_dense(matrix, in_shape=None, out_shape=None):
    return MatrixOperator(matrix, in_shape, out_shape)


def build_conv2d_circular(kernel, shape, method="auto"):
    """Circular convolution with an odd-sized kernel on images of ``shape``."""
    return CircularConvolution(kernel, shape, method=method)


def build_downsample_blur(kernel, shape, scale, method="auto"):
    return DownsampleBlur(kernel, shape, scale, method=method)


def build_masked_fourier(mask, shape=None, channels=1):
    grid = mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    if shape is not None and tuple(shape[:2]) != grid.shape:
        raise ShapeError(f"mask grid {grid.shape} does not match image shape {tuple(shape[:2])}")
    return MaskedFourier(mask, channels=channels)


def uniform_kernel(size=9):
    return np.full((size, size), 1.0 / size**2)


def gaussian_kernel(size=9, std=1.6):
    """Isotropic Gaussian truncated to ``size x size`` and normalised to sum 1."""
    r = np.arange(size) - size // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * std**2))
    return g / g.sum()


def delta_kernel(size=1):
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def _target_count(fraction, total):
    return max(1, int(np.floor(fraction * total)))


def _random_mask(fraction, rows, cols, gen):
    total = rows * cols
    grid = (gen.random(total) < fraction).reshape(rows, cols)
    grid[0, 0] = True
    target = _target_count(fraction, total)
    flat = grid.reshape(-1)
    count = int(flat.sum())
    if count > target:
        on = np.flatnonzero(flat[1:]) + 1
        drop = on[gen.permutation(on.size)[: count - target]]
        flat[drop] = False
    elif count < target:
        off = np.flatnonzero(~flat)
        flat[off[gen.permutation(off.size)[: target - count]]] = True
    return grid


def _cartesian_mask(fraction, rows, cols, gen):
    nrows = min(rows, max(1, int(round(fraction * rows))))
    others = 1 + gen.permutation(rows - 1)[: nrows - 1]
    grid = np.zeros((rows, cols), dtype=bool)
    grid[0, :] = True
    grid[others, :] = True
    return grid


def _spokes(n, rows, cols, offset):
    """Rasterise ``n`` lines through the centred DC cell, nearest-cell sampling."""
    grid = np.zeros((rows, cols), dtype=bool)
    cr, cc = rows // 2, cols // 2
    half = 0.5 * np.hypot(rows, cols) + 1.0
    t = np.arange(-half, half + 0.25, 0.25)
    for i in range(n):
        theta = offset + np.pi * i / n
        r = np.rint(cr + t * np.sin(theta)).astype(int)
        c = np.rint(cc + t * np.cos(theta)).astype(int)
        ok = (r >= 0) & (r < rows) & (c >= 0) & (c < cols)
        grid[r[ok], c[ok]] = True
    return np.fft.ifftshift(grid)


def _radial_mask(fraction, rows, cols, gen):
    target = fraction * rows * cols
    offset = gen.random() * np.pi
    best, prev = None, None
    for n in range(1, 8 * max(rows, cols) + 1):
        grid = _spokes(n, rows, cols, offset)
        if grid.sum() >= target:
            best = grid
            if prev is not None and abs(prev.sum() - target) < abs(grid.sum() - target):
                best = prev
            break
        prev = grid
    return best if best is not None else prev


def make_mask(kind, fraction, shape, seed=0):
    """Seeded k-space sampling mask.

    ``random`` draws i.i.d. Bernoulli cells and then corrects the count to
    ``floor(fraction * size)`` exactly. ``cartesian`` keeps
    ``round(fraction * rows)`` full rows chosen uniformly. ``radial`` uses
    evenly spaced spokes through DC with a random angular offset; the spoke
    count is the one whose coverage is closest to the requested fraction.
    The DC cell is always sampled.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    rows, cols = int(shape[0]), int(shape[1])
    gen = Xoshiro256(seed)
    if fraction == 1.0:
        grid = np.ones((rows, cols), dtype=bool)
    elif kind == "random":
        grid = _random_mask(fraction, rows, cols, gen)
    elif kind == "cartesian":
        grid = _cartesian_mask(fraction, rows, cols, gen)
    elif kind == "radial":
        grid = _radial_mask(fraction, rows, cols, gen)
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return SamplingMask(grid=grid, fraction=float(grid.mean()), kind=kind, seed=int(seed), requested=float(fraction))


def _random_signal(shape, gen, domain=REAL):
    return Signal._wrap(gen.standard_normal(shape), domain)


def op_norm_estimate(A, tol=1e-12, max_iter=1000, seed=0, return_iterations=False):
    """Power iteration on ``A*A``; returns the square root of the Rayleigh quotient.

    Stops once successive estimates differ by less than ``tol`` or after
    ``max_iter`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    gen = Xoshiro256(seed)
    x = _random_signal(A.in_shape, gen, A.in_domain)
    x = x / norm2(x)
    est = prev = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        y = A.adjoint(A.apply(x))
        est = np.sqrt(max(inner(x, y), 0.0))
        ny = norm2(y)
        if ny == 0.0:
            est = 0.0
            break
        x = y / ny
        if abs(est - prev) < tol:
            break
        prev = est
    if return_iterations:
        return float(est), it
    return float(est)


def norm_sq(A, seed=0):
    """Upper bound on ``||A||^2``: the exact bound when known, else a padded estimate."""
    if A.norm_bound is not None:
        return A.norm_bound**2
    return op_norm_estimate(A, seed=seed) ** 2 * (1.0 + 1e-6)


@dataclass
class AdjointReport:
    passed: bool
    worst_violation: float
    trials: int
    tol: float


def adjoint_check(A, trials=100, tol=1e-10, seed=0):
    """Test ``<Ax, u> = <x, A*u>`` on seeded random pairs.

    A pair passes when the gap is at most ``tol * (1 + |<Ax, u>|)``; the
    report carries the worst relative violation seen.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    gen = Xoshiro256(seed)
    worst = 0.0
    for _ in range(trials):
        x = _random_signal(A.in_shape, gen, A.in_domain)
        u = _random_signal(A.out_shape, gen, A.out_domain)
        lhs = inner(A.apply(x), u)
        rhs = inner(x, A.adjoint(u))
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return AdjointReport(passed=worst <= tol, worst_violation=worst, trials=trials, tol=tol)
