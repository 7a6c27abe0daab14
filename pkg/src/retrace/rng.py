"""SplitMix64 random streams.

SplitMix64 is counter based: the n-th output of a stream seeded with ``s`` is
``mix64(s + n * GOLDEN)`` (arithmetic mod 2**64, n starting at 1). Any
implementation that reproduces ``mix64`` bit-for-bit reproduces every
trajectory, Garnet instance and Monte-Carlo estimate in this package.

Conventions used everywhere:

* uniform float in [0, 1): ``(u64 >> 11) * 2**-53``
* categorical draw: first index whose running cumulative sum exceeds the
  uniform; falls back to the last positive-probability index
* derived seeds: ``derive_seed(seed, k1, k2, ...)`` folds keys left to right
  with ``h = mix64(h ^ mix64(k + GOLDEN))``
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 2.0**-53


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorised :func:`mix64` on a uint64 array (wrapping arithmetic)."""
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_M1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_M2)
    z ^= z >> np.uint64(31)
    return z


def derive_seed(seed: int, *keys: int) -> int:
    h = seed & MASK64
    for k in keys:
        h = mix64(h ^ mix64((k + GOLDEN) & MASK64))
    return h


class SplitMix64:
    """Scalar SplitMix64 stream with a few sampling helpers."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integers(self, n: int) -> int:
        """Uniform integer in ``range(n)`` (floor of a scaled uniform)."""
        return min(int(self.random() * n), n - 1)

    def categorical(self, probs) -> int:
        u = self.random()
        acc = 0.0
        last = -1
        for i, p in enumerate(probs):
            if p > 0.0:
                acc += p
                last = i
                if u < acc:
                    return i
        return last

    def random_array(self, n: int) -> np.ndarray:
        """The next ``n`` uniforms of this stream, as one vector."""
        counters = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN)
        counters += np.uint64(self.state)
        self.state = (self.state + n * GOLDEN) & MASK64
        return (mix64_array(counters) >> np.uint64(11)).astype(np.float64) * _INV53


def categorical_array(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draws; ``probs`` is (n, k), ``u`` is (n,).

    Matches :meth:`SplitMix64.categorical` except for ties in floating-point
    cumulative sums, which both resolve to the same index.
    """
    cdf = np.cumsum(probs, axis=1)
    idx = (u[:, None] >= cdf).sum(axis=1)
    last_pos = probs.shape[1] - 1 - np.argmax((probs > 0)[:, ::-1], axis=1)
    return np.minimum(idx, last_pos)
