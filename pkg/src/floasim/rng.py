"""Counter-based random streams.

Every random draw in a simulation is addressed by ``(global_seed, name,
*counters)``.  The name and seed are hashed into a Philox key and the counters
are written into the Philox counter block, so a draw never depends on how many
other draws happened before it.  Worker gradients can therefore be evaluated
in any order, or concurrently, without changing results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{seed & _MASK64}|{name}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStreams:
    """Factory for named, independent generators derived from one seed."""

    global_seed: int

    def generator(self, name: str, *counters: int) -> np.random.Generator:
        """Return a fresh generator for ``name`` at the given counter position.

        Up to three non-negative integer counters (e.g. round, worker) may be
        given.  Word 0 of the Philox counter is left at zero; it advances as
        numbers are drawn, so draws under different counters never overlap in
        practice (2**64 blocks apart).
        """
        if len(counters) > 3:
            raise ValueError("at most three counters are supported")
        words = [0, 0, 0, 0]
        for slot, value in enumerate(counters, start=1):
            if value < 0:
                raise ValueError(f"counters must be non-negative, got {value}")
            words[slot] = int(value) & _MASK64
        bitgen = np.random.Philox(key=_key(self.global_seed, name), counter=words)
        return np.random.Generator(bitgen)
