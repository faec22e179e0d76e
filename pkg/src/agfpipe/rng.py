"""Deterministic RNG derivation.

Every stochastic component takes an explicit numpy Generator. Streams are
derived from one master seed plus string tags, so independent stages never
share or race a global RNG state.
"""

import zlib

import numpy as np


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Derive an independent Generator from a master seed and context tags.

    Tags are hashed with crc32, which is stable across platforms and runs,
    so the same (seed, tags) always yields the same stream.
    """
    keys = tuple(zlib.crc32(str(t).encode("utf-8")) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=keys))
