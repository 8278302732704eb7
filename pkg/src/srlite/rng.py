"""Seeded random streams.

All randomness comes from numpy's PCG64 bit generator.  One root seed fans
out into independent, named streams by hashing ``(root seed, purpose id,
*extra keys)`` through ``SeedSequence``, so e.g. parameter init and data
shuffling never consume from each other and reruns are portable across
platforms.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "init": 1,
    "shuffle": 2,
    "synth": 3,
    "disc_init": 4,
    "split": 5,
}


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    try:
        pid = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), pid, *map(int, keys)])))
