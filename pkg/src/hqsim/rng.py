"""Portable seeded random numbers.

All randomness in the simulator goes through :class:`SplitMix64`, a 64-bit
generator with a published, trivially portable algorithm (Steele, Lea and
Flood, 2014). Floats are built from the top 53 bits, integers and
exponential variates by inversion, so any implementation that follows the
same recipe reproduces the same workloads and task durations bit for bit.
"""

from __future__ import annotations

import math
import zlib

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def key_of(value: int | str) -> int:
    """Stable 64-bit key for an int or a string (CRC-32 of its UTF-8 bytes)."""
    if isinstance(value, str):
        return zlib.crc32(value.encode("utf-8"))
    return value & MASK64


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    @classmethod
    def derive(cls, seed: int, *keys: int | str) -> "SplitMix64":
        """Independent stream for ``seed`` labelled by ``keys``.

        Used to give every (job, phase, task) its own stream so sampled
        durations do not depend on the order in which a strategy runs tasks.
        """
        state = seed & MASK64
        for key in keys:
            state = mix64((state ^ mix64((key_of(key) + GOLDEN_GAMMA) & MASK64)) & MASK64)
        return cls(state)

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in [low, high], inclusive."""
        span = high - low + 1
        return low + min(int(self.random() * span), span - 1)

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.random()) / rate
