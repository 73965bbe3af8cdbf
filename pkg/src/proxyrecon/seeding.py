"""Deterministic, splittable random streams.

All randomness in the package flows from a (master, stream) pair.  Streams
are derived by hashing structured labels (experiment name, replication id,
column id, ...), so parallel schedules and thread counts cannot change
results: every independent unit of work owns its own stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1


def _hash_parts(parts) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


@dataclass(frozen=True)
class Seed:
    """A (master, stream) pair identifying one independent random stream."""

    master: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master", int(self.master) & MASK64)
        object.__setattr__(self, "stream", int(self.stream) & MASK64)

    def derive(self, *parts) -> "Seed":
        """Child seed for a labeled unit of work (pure, order-sensitive)."""
        return Seed(self.master, _hash_parts((self.stream,) + parts))

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator for this stream (counter-based, stateless)."""
        return np.random.Generator(
            np.random.Philox(key=(self.master << 64) | self.stream)
        )
