"""Counter-based random streams.

Every random quantity in the pipeline is drawn from a generator keyed by a
tuple of integers (seed, stage, index, ...). Keys never depend on scheduling,
so results do not change with the number of workers.
"""

import numpy as np

# stage keys
DATA = 1
VB_DRAWS = 2
WEIGHTS = 3
HORSESHOE = 4
CV_FOLDS = 5
REPLICATION = 6


def stream(seed, *keys):
    """Return a Philox generator for the key (seed, *keys)"""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *keys):
    """Collapse (seed, *keys) into a single 63-bit integer seed"""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def chunk_bounds(total, chunk_size):
    """Fixed-size [start, stop) blocks covering range(total)"""
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]
