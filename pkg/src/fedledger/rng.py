"""Derivation of independent random streams from a single run seed.

Each consumer of randomness gets its own namespaced substream so that
enabling or disabling one feature (replay sampling, Fisher estimation, ...)
never shifts the draws seen by another.  Streams are derived through
``numpy.random.SeedSequence`` with an explicit entropy path, which is stable
across platforms and numpy versions.
"""

import numpy as np

# Stream namespaces.  Values are part of the determinism contract: changing
# them changes every simulated trajectory.
NS_INIT = 1
NS_SCHEDULE = 2
NS_STREAM = 3
NS_INJECT = 4
NS_TRAIN = 5
NS_REPLAY = 6
NS_BUFFER = 7
NS_FISHER = 8
NS_SCRATCH = 9
NS_SYNTH = 10


def substream(base_seed, *path):
    """Return a ``numpy.random.Generator`` for the given namespace path."""
    entropy = (int(base_seed),) + tuple(int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def subseed(base_seed, *path):
    """Collapse a namespace path into a single integer seed."""
    entropy = (int(base_seed),) + tuple(int(p) for p in path)
    state = np.random.SeedSequence(entropy).generate_state(1, np.uint64)
    return int(state[0])
