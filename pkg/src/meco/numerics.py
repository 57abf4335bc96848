"""Log-domain helpers and seeded random streams."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["logaddexp", "logmeanexp", "RngStream"]


def logaddexp(a: float, b: float) -> float:
    """``log(exp(a) + exp(b))`` without overflow.

    Both arguments ``-inf`` gives ``-inf``.
    """
    if a == -math.inf and b == -math.inf:
        return -math.inf
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def logmeanexp(values) -> float:
    """``log(mean(exp(values)))`` for a 1-D batch, shifted by the max."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("logmeanexp of an empty batch")
    m = float(np.max(values))
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.mean(np.exp(values - m))))


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by the Philox-4x64 counter-based generator with the 128-bit key
    set to ``[seed, stream_id]``, so each pair names an independent stream and
    identical pairs always give identical draws.  A stream is meant for a
    single consumer.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def derive(self, stream_id: int) -> "RngStream":
        """A fresh stream with the same seed and a different id."""
        return RngStream(self.seed, stream_id)

    def normal(self, size=None, loc=0.0, scale=1.0):
        return self.generator.normal(loc, scale, size)

    def uniform(self, size=None, low=0.0, high=1.0):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)
