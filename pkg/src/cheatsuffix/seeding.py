"""Deterministic seeded random streams shared by every stochastic component.

All randomness in the toolkit flows through the splitmix64 generator so that
runs reproduce bit-for-bit across platforms and implementations. Outputs are
rounded to 32-bit floats before use; index sampling maps those floats onto
finite ranges with a fixed floor rule.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 stream: state += gamma, then a three-stage mix per output."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        """One real in [-1, 1), rounded to 32-bit float precision."""
        z = self.next_u64()
        real = ((z >> 11) / 2.0**53) * 2.0 - 1.0
        return float(np.float32(real))

    def next_index(self, n: int) -> int:
        """Uniform index in [0, n) via floor((x + 1) / 2 * n)."""
        if n <= 0:
            raise ValueError("next_index requires a positive range")
        x = self.next_unit()
        return int(math.floor((x + 1.0) / 2.0 * n))

    def next_chance(self, p: float) -> bool:
        """True with probability p."""
        return (self.next_unit() + 1.0) / 2.0 < p

    def choose(self, items: Sequence):
        return items[self.next_index(len(items))]


def seeded_uniform(seed: int, count: int) -> np.ndarray:
    """Deterministic float32 stream of `count` reals in [-1, 1)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = SplitMix64(seed)
    return np.array([rng.next_unit() for _ in range(count)], dtype=np.float32)


def seeded_matrix(seed: int, rows: int, cols: int) -> np.ndarray:
    """Row-major matrix filled from the seeded stream."""
    return seeded_uniform(seed, rows * cols).reshape(rows, cols)
