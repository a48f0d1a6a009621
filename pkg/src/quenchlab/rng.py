"""Counter-based random streams keyed by (master seed, stream indices)."""

import numpy as np


def make_rng(seed, *keys):
    """Return an independent Philox generator for ``(seed, *keys)``.

    Distinct key tuples give statistically independent streams, so tasks can be
    farmed out in any order and still reproduce bit for bit.
    """
    keys = tuple(int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=keys)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *keys):
    """Collapse ``(seed, *keys)`` into a single 63-bit integer seed."""
    keys = tuple(int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=keys)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
