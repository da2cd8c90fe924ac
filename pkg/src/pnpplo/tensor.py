"""Dense signal container, Euclidean geometry, noise and image metrics."""

from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256

REAL = "real"
COMPLEX = "complex"


class ShapeError(ValueError):
    """Raised when two signals (or a signal and an operator) disagree in shape."""


class Signal:
    """Immutable real tensor of shape ``(rows, cols, channels)``.

    Data is stored in float64, row-major and channel-interleaved, so
    ``signal.data.ravel()`` is the flat layout used by the file formats.
    A ``complex`` domain tag means the channels come in ``(re, im)`` pairs;
    the geometry is still the real one, ``<a, b> = sum(a_i * b_i)``.

    Parameters
    ----------
    data : array_like
        1-D (treated as ``(n, 1, 1)``), 2-D (``(rows, cols, 1)``) or 3-D.
    domain : {"real", "complex"}
    """

    __slots__ = ("_data", "_domain")

    def __init__(self, data, domain=REAL):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1, 1)
        elif arr.ndim == 2:
            arr = arr[:, :, None]
        elif arr.ndim != 3:
            raise ShapeError(f"signal data must have 1 to 3 dimensions, got {arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"signal dimensions must be positive, got {arr.shape}")
        if domain not in (REAL, COMPLEX):
            raise ValueError(f"unknown domain tag {domain!r}")
        if domain == COMPLEX and arr.shape[2] % 2:
            raise ShapeError("complex signals need an even channel count")
        arr.flags.writeable = False
        self._data = arr
        self._domain = domain

    @classmethod
    def _wrap(cls, arr, domain):
        # trusted fast path: arr is a fresh float64 array of valid shape
        obj = object.__new__(cls)
        arr.flags.writeable = False
        obj._data = arr
        obj._domain = domain
        return obj

    @classmethod
    def zeros(cls, shape, domain=REAL):
        return cls._wrap(np.zeros(shape, dtype=np.float64), domain)

    @classmethod
    def from_complex(cls, z):
        """Pack a complex ``(rows, cols[, c])`` array into interleaved channels."""
        z = np.asarray(z)
        if z.ndim == 2:
            z = z[:, :, None]
        out = np.empty(z.shape[:2] + (2 * z.shape[2],), dtype=np.float64)
        out[:, :, 0::2] = z.real
        out[:, :, 1::2] = z.imag
        return cls._wrap(out, COMPLEX)

    @property
    def data(self):
        return self._data

    @property
    def domain(self):
        return self._domain

    @property
    def shape(self):
        return self._data.shape

    @property
    def size(self):
        return self._data.size

    @property
    def is_complex(self):
        return self._domain == COMPLEX

    def vector(self):
        """Flat row-major view of the samples."""
        return self._data.reshape(-1)

    def to_complex(self):
        """Complex ``(rows, cols, channels // 2)`` array for complex-tagged data."""
        if not self.is_complex:
            raise ValueError("signal is not tagged complex")
        return self._data[:, :, 0::2] + 1j * self._data[:, :, 1::2]

    def like(self, arr):
        """New signal with this signal's domain tag and ``arr`` reshaped to its shape."""
        return Signal._wrap(np.array(arr, dtype=np.float64).reshape(self.shape), self._domain)

    def _other(self, other):
        if isinstance(other, Signal):
            if other.shape != self.shape:
                raise ShapeError(f"shape mismatch: {self.shape} vs {other.shape}")
            return other._data
        return NotImplemented

    def __add__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return Signal._wrap(self._data + o, self._domain)

    def __sub__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return Signal._wrap(self._data - o, self._domain)

    def __mul__(self, c):
        if isinstance(c, Signal):
            return NotImplemented
        return Signal._wrap(self._data * float(c), self._domain)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Signal._wrap(self._data / float(c), self._domain)

    def __neg__(self):
        return Signal._wrap(-self._data, self._domain)

    def __repr__(self):
        return f"Signal(shape={self.shape}, domain={self._domain!r})"


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def inner(a, b):
    """Euclidean inner product ``sum(a_i * b_i)``."""
    _check_same(a, b)
    return float(np.dot(a.vector(), b.vector()))


def norm2(a):
    v = a.vector()
    sq = float(np.dot(v, v))
    if 1e-280 < sq < 1e280 or sq == 0.0 and not v.any():
        return float(np.sqrt(sq))
    # rescale when the plain sum of squares under- or overflows
    peak = float(np.max(np.abs(v)))
    if not np.isfinite(peak):
        return peak
    return peak * float(np.sqrt(np.dot(v / peak, v / peak)))


def distance(a, b):
    return norm2(a - b)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise of standard deviation ``sigma``."""

    sigma: float
    seed: int = 0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"noise sigma must be non-negative, got {self.sigma}")
        if self.kind != "gaussian":
            raise ValueError(f"unsupported noise kind {self.kind!r}")


def gaussian_noise(shape, spec):
    """Noise array of the given shape, a pure function of ``(shape, spec)``."""
    gen = Xoshiro256(spec.seed)
    return spec.sigma * gen.standard_normal(shape)


def add_noise(x, spec):
    """Return ``x + n`` with ``n ~ N(0, sigma^2)`` i.i.d. per sample.

    ``sigma = 0`` returns ``x`` unchanged (bit-exact).
    """
    if spec.sigma == 0:
        return x
    return Signal._wrap(x.data + gaussian_noise(x.shape, spec), x.domain)


def psnr(reference, test, peak):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    _check_same(reference, test)
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference.data - test.data) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))
