"""Seeded, splittable randomness.

The generator is xoshiro256** with splitmix64 state expansion.  A stream is
addressed by ``(seed, stream_id)``: the expansion seed is
``seed XOR mix64(stream_id)``, so the same pair always reproduces the same
sequence and distinct stream ids behave independently.  Derived streams
(:meth:`Rng.derive`) are used wherever work fans out over examples, trials,
or parameter tensors, which keeps results independent of scheduling order.

Uniform doubles are built from the top 53 bits of each draw and lie in the
open interval (0, 1), so log-based transforms never see an endpoint.
"""

import numpy as np

from plab import kernels
from plab.errors import ParameterError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """One splitmix64 step (golden-ratio increment plus finalizer); the hash
    used for stream derivation."""
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


class Rng:
    """One xoshiro256** stream.  Single-owner: do not share across workers;
    hand each worker a :meth:`derive` child instead."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ParameterError("seed and stream_id must be non-negative")
        self.seed = seed & _MASK
        self.stream_id = stream_id & _MASK
        base = self.seed ^ mix64(self.stream_id)
        state = np.empty(4, dtype=np.uint64)
        z = base
        for i in range(4):
            z = (z + _GOLDEN) & _MASK
            state[i] = mix64(z)
        if not state.any():  # xoshiro state must not be all-zero
            state[0] = 1
        self._state = state

    def derive(self, k: int) -> "Rng":
        """Child stream ``k``; deterministic in (seed, stream_id, k)."""
        return Rng(self.seed, mix64(self.stream_id ^ ((k + 1) * _GOLDEN)))

    def u64(self, n: int) -> np.ndarray:
        return kernels.xoshiro_fill(self._state, int(n))

    def uniform01(self, n: int) -> np.ndarray:
        """n doubles in the open interval (0, 1)."""
        bits = self.u64(n) >> np.uint64(12)
        return (bits.astype(np.float64) + 0.5) * 2.0**-52

    def uniform(self, bound: float, shape) -> np.ndarray:
        """Elementwise U(-bound, bound)."""
        if bound < 0:
            raise ParameterError("uniform bound must be >= 0")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if bound == 0.0:
            self.u64(n)  # keep the stream advance identical for all scales
            return np.zeros(shape)
        return ((2.0 * self.uniform01(n) - 1.0) * bound).reshape(shape)

    def gauss(self, sigma: float, shape) -> np.ndarray:
        """Elementwise N(0, sigma^2) via Box-Muller."""
        if sigma < 0:
            raise ParameterError("gauss sigma must be >= 0")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        m = (n + 1) // 2
        u = self.uniform01(2 * m)
        if sigma == 0.0:
            return np.zeros(shape)
        r = np.sqrt(-2.0 * np.log(u[:m]))
        ang = (2.0 * np.pi) * u[m:]
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        return (z * sigma).reshape(shape)

    def laplace(self, scale: float, shape) -> np.ndarray:
        """Elementwise Laplace(0, scale) via inverse CDF."""
        if scale < 0:
            raise ParameterError("laplace scale must be >= 0")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = self.uniform01(n)
        if scale == 0.0:
            return np.zeros(shape)
        v = u - 0.5
        return (-scale * np.sign(v) * np.log1p(-2.0 * np.abs(v))).reshape(shape)

    def randint(self, bound: int) -> int:
        """One integer in [0, bound); modulo bias is negligible for the
        desk-scale bounds used here."""
        if bound <= 0:
            raise ParameterError("randint bound must be positive")
        return int(self.u64(1)[0] % np.uint64(bound))

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        draws = self.u64(max(n - 1, 0))
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
