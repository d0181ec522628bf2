"""Deterministic RNG derivation.

Every stochastic component draws from a Generator derived from (seed,
stream, ...) tuples, so runs replay exactly and sub-streams never
collide.
"""

import numpy as np

# stream tags (arbitrary fixed ints)
INIT = 0
DEPTH = 1
STATE = 2
DROPOUT = 3
SHUFFLE = 4
EVAL = 5
PAIRING = 6
ROLLOUT = 7
ALIGN_STEP = 8
DATA = 9


def make_rng(*entropy):
    """Generator seeded from a tuple of non-negative ints."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def derive_seed(*entropy):
    """A stable 63-bit int derived from the entropy tuple."""
    state = np.random.SeedSequence(list(entropy)).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def state_rng(seed):
    """Generator for a recorded scalar seed (trajectory replay)."""
    return np.random.Generator(np.random.PCG64(seed))
