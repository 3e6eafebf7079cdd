"""Counter-based random source used by the sampling estimators.

The sequence is part of the external contract so results reproduce across
implementations.  Draw ``i`` (0-based) of stream ``seed`` is defined as

    state  = (seed + (i + 1) * GAMMA)      mod 2**64
    output = mix64(state)

with ``GAMMA = 0x9E3779B97F4A7C15`` and ``mix64`` the SplitMix64 finalizer:

    z ^= z >> 30;  z *= 0xBF58476D1CE4E9B5
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

Uniform floats in [0, 1) take the top 53 bits: ``(output >> 11) * 2**-53``.
Discrete levels in [0, n) are ``min(n - 1, floor(u * n))``.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E9B5)
_M2 = np.uint64(0x94D049BB133111EB)
_GAMMA = np.uint64(GAMMA)


def mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Seedable stream; each instance tracks how many draws were consumed."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._next = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._next + 1, self._next + n + 1, dtype=np.uint64)
        self._next += n
        return mix64(self.seed + idx * _GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """n floats in [0, 1), one draw each."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def levels(self, n: int, num_levels: int) -> np.ndarray:
        """n integers uniform on {0, ..., num_levels - 1}."""
        u = self.uniform(n)
        return np.minimum((u * num_levels).astype(np.int64), num_levels - 1)

    def bits(self, n: int) -> np.ndarray:
        """n fair {0, 1} draws."""
        return (self.uniform(n) < 0.5).astype(np.uint8)
