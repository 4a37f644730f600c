"""Counter-based seed derivation.

Every random stream in the package is a ``numpy.random.Generator`` built from
``SeedSequence(root, spawn_key=key)``. The key is a tuple of small integers
naming where the stream is used (trial, iteration, purpose, attempt, ...), so
a stream never depends on how many draws happened elsewhere. Runs are
therefore reproducible and independent of scheduling order.
"""

from __future__ import annotations

import numpy as np


# purpose tags used in derived keys
COST = 0
GRADIENT = 1
CHECK = 2
SYSTEM = 3

# sub-stream tags inside one estimate
INITIAL_STATE = 0
PERTURBATION = 1
NOISE = 2


def seed_sequence(seed, *key: int) -> np.random.SeedSequence:
    """Return the SeedSequence at ``key`` below ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        base_key = tuple(seed.spawn_key)
        return np.random.SeedSequence(seed.entropy, spawn_key=base_key + tuple(int(k) for k in key))
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def rng(seed, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


def describe(seed) -> dict:
    """JSON-friendly description of a seed (root entropy and key path)."""
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": int(seed.entropy), "key": [int(k) for k in seed.spawn_key]}
    return {"entropy": int(seed), "key": []}
