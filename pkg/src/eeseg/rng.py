"""Deterministic pseudorandom streams (splitmix64).

All fixture weights, images and labels are derived from splitmix64 so that
the same seed produces bitwise-identical artifacts on every platform. The
generator state advances by a fixed 64-bit increment, which lets the whole
stream be computed as one vectorized expression.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """Return the first `count` outputs of splitmix64 seeded with `seed`, as uint64."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform_f32(seed: int, count: int, low: float, high: float) -> np.ndarray:
    """Uniform float32 values in [low, high), derived from the splitmix64 stream."""
    z = splitmix64(seed, count)
    # 53 high bits -> double in [0, 1), the standard bit-to-float mapping
    u = (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    return (low + (high - low) * u).astype(np.float32)


def integers(seed: int, count: int, bound: int) -> np.ndarray:
    """Integers in [0, bound) via modulo reduction of the splitmix64 stream."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    return (splitmix64(seed, count) % np.uint64(bound)).astype(np.int64)
