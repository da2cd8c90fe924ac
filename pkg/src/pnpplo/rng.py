"""Seeded pseudo-random generator used for every stochastic step in the package.

The stream is xoshiro256** seeded through SplitMix64, and normal deviates come
from the Box-Muller transform. Both algorithms are small and fully specified,
so a run can be reproduced from its seed alone, independent of numpy's
generator versions.
"""

import math

import numpy as np

_MASK = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state):
    """Advance a SplitMix64 state; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** generator.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed. It is expanded into the 256-bit state with
        SplitMix64, so nearby seeds give unrelated streams.
    """

    def __init__(self, seed=0):
        seed = int(seed)
        if seed < 0 or seed > _MASK:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        sm = seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s
        self._spare = None

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def u64_batch(self, n):
        """Next ``n`` raw outputs as a uint64 array (same stream as ``next_u64``)."""
        s0, s1, s2, s3 = self._s
        mask = _MASK
        out = [0] * n
        for i in range(n):
            x = (s1 * 5) & mask
            out[i] = ((((x << 7) | (x >> 57)) & mask) * 9) & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & mask
        self._s = [s0, s1, s2, s3]
        return np.array(out, dtype=np.uint64)

    def split(self):
        """Return an independent child generator seeded from this stream."""
        return Xoshiro256(self.next_u64())

    def random(self, size=None):
        """Uniform doubles on ``[0, 1)`` built from the top 53 bits."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        n = int(np.prod(size))
        out = (self.u64_batch(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return out.reshape(size)

    def integers(self, high):
        """Uniform integer on ``[0, high)`` by rejection (no modulo bias)."""
        if high <= 0:
            raise ValueError("high must be positive")
        limit = _MASK - (_MASK % high)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % high

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def standard_normal(self, size=None):
        """Standard normal deviates via Box-Muller.

        Deviates are produced in pairs from two consecutive uniforms; the
        cosine branch comes first and an unused sine branch is kept for the
        next draw, so batched and scalar draws yield the same sequence.
        """
        if size is None:
            return self._normal_one()
        n = int(np.prod(size))
        out = np.empty(n, dtype=np.float64)
        start = 0
        if n and self._spare is not None:
            out[0], self._spare = self._spare, None
            start = 1
        pairs = (n - start + 1) // 2
        if pairs:
            z = self._box_muller(pairs)
            out[start:] = z[: n - start]
            if (n - start) % 2:
                self._spare = float(z[-1])
        return out.reshape(size)

    def _box_muller(self, pairs):
        raw = (self.u64_batch(2 * pairs) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        # 1 - u lies in (0, 1], keeping log finite
        u1 = 1.0 - raw[0::2]
        u2 = raw[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(_TWO_PI * u2)
        z[1::2] = r * np.sin(_TWO_PI * u2)
        return z

    def _normal_one(self):
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        z = self._box_muller(1)
        self._spare = float(z[1])
        return float(z[0])
