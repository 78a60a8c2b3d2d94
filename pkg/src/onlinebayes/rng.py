"""Deterministic, splittable random streams.

Every stochastic routine takes an integer seed. Replications are processed in
fixed-size blocks; block ``b`` draws from ``PCG64(SeedSequence(seed,
spawn_key=(b,)))``, so results do not depend on how blocks are scheduled.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

ALGORITHM = "numpy PCG64 seeded by SeedSequence(seed, spawn_key=(block,))"
BLOCK = 8192


def generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def blocks(seed: int, total: int, block: int = BLOCK) -> Iterator[tuple[int, np.random.Generator]]:
    """Yield ``(size, generator)`` pairs covering ``total`` replications."""
    for b, start in enumerate(range(0, total, block)):
        yield min(block, total - start), generator(seed, b)
