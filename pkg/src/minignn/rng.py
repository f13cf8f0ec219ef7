"""Deterministic pseudo-randomness.

The generator is SplitMix64: a 64-bit counter advanced by the golden-ratio
increment, with a fixed finalizer mix. The algorithm is frozen so that a
seed produces the same sequence on every platform and every run. All
randomness in the project flows from one root seed through ``Rng.spawn``,
which derives independent sub-streams from string labels.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


class Rng:
    """SplitMix64 stream with convenience samplers."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def spawn(self, label: str) -> "Rng":
        """Derive an independent sub-stream from a string label."""
        return Rng(_mix(self._state ^ _fnv1a64(label)))

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        # 53-bit mantissa, the standard u64 -> [0, 1) construction.
        u = self.next_u64() >> 11
        return low + (high - low) * (u * (1.0 / (1 << 53)))

    def uniforms(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = [self.uniform(low, high) for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def normal(self) -> float:
        # Box-Muller; one value per pair keeps the stream layout simple.
        u1 = self.uniform()
        u2 = self.uniform()
        while u1 <= 1e-300:
            u1 = self.uniform()
            u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        vals = [self.normal() for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        limit = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct integers from range(n), in shuffled order."""
        if k > n:
            raise ValueError(f"cannot sample {k} from {n}")
        idx = list(range(n))
        self.shuffle(idx)
        return idx[:k]
