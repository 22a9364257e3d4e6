"""
Counter-based random streams.

Every consumer draws from a Philox generator keyed by (seed, stream, index),
so results do not depend on the order in which streams are created.
"""

import numpy as np

INIT_STREAM = 0
DROPOUT_STREAM = 1
AUGMENT_STREAM = 2
SAMPLING_STREAM = 3
PADDING_STREAM = 4
PHANTOM_STREAM = 5


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox generator for (seed, *keys)."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))
