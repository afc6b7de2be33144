"""Reproducible noise streams.

Streams are counter-based (numpy Philox keyed by ``(seed, stream_id)``), so
the same pair always reproduces the identical increment sequence and distinct
stream ids give statistically independent streams without coordination.
"""

from __future__ import annotations

import numpy as np


class NoiseStream:
    """Standard-normal increment source identified by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if not 0 <= stream_id < 2**64:
            raise ValueError("stream_id must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def normals(self, shape) -> np.ndarray:
        """Draw the next block of iid standard normals, advancing the stream."""
        return self._gen.standard_normal(shape)

    def substream(self, stream_id: int) -> "NoiseStream":
        """Fresh independent stream under the same seed."""
        return NoiseStream(self.seed, stream_id)

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, stream_id={self.stream_id})"
