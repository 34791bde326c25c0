"""Seeded random streams.

Every stochastic operation takes an explicit ``numpy.random.Generator``.
Purpose-specific streams are derived from a master seed; changing the
number of training iterations never perturbs parameter initialisation.
"""

import numpy as np

STREAMS = {
    "init": 1,
    "data": 2,
    "episodes": 3,
    "eval": 4,
    "augment": 5,
}


def make_rng(seed: int | None) -> np.random.Generator:
    return np.random.default_rng(seed)


def derive_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``stream`` (and optional sub-keys) under ``seed``."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[stream], *keys))
    return np.random.default_rng(sequence)


def derive_seed(seed: int, stream: str, *keys: int) -> int:
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[stream], *keys))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
