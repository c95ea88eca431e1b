import math

import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def round_half_up(x):
    return int(math.floor(x + 0.5))


def derived_rng(seed, *keys):
    """Generator for one independent task, keyed by ``(seed, *keys)``.

    Tasks keyed this way draw the same numbers whether they run
    sequentially or in a pool, in any order.
    """
    return np.random.default_rng(np.random.SeedSequence([check_seed(seed), *map(int, keys)]))
