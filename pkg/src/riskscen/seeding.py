"""Deterministic seed derivation.

Every stochastic routine takes an explicit 64-bit master seed. Parallel or
repeated work derives child seeds from (master, *path) so experiment cells
can run in any order, or on any number of workers, and still reproduce
bit-identically. The underlying bit generator is numpy's PCG64.
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "pcg64"


def rng_from(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by a master seed and an index path."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, path))))


def child_seed(seed: int, *path: int) -> int:
    """A derived 64-bit seed, stable across runs and platforms."""
    ss = np.random.SeedSequence((int(seed), *map(int, path)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
