"""Deterministic random streams.

Every source of randomness in the library draws from an RngStream keyed by
(seed, stream_id).  Identical keys produce identical draw sequences on every
platform, which is what makes parameter initialization, data shuffling and
dropout masks exactly reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Reserved stream ids.  Parameter streams are derived from parameter names
# (see stream_id_for_name) and never collide with these small constants.
DATA_STREAM = 1
DROPOUT_STREAM = 2
VECTOR_STREAM = 3
WORKER_STREAM_BASE = 1000


def stream_id_for_name(name: str) -> int:
    """Stable 64-bit stream id for a hierarchical parameter name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """A named substream of a master seed.

    Wraps numpy's PCG64 seeded through SeedSequence so that the mapping
    (seed, stream_id) -> draws is stable across processes and platforms.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq, size=None, replace=True):
        return self._gen.choice(seq, size=size, replace=replace)

    def shuffle(self, seq) -> None:
        self._gen.shuffle(seq)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
