"""Seeded random substreams.

Every stochastic stage draws from a Philox counter-based generator keyed by
``(seed, *key)``, so results depend only on the seed and the stage/run index,
never on scheduling order.
"""

from __future__ import annotations

import numpy as np

# stage tags keep substreams of different stages disjoint
EMISSION = 1
JITTER = 2
THIN = 3
BUNCHING = 4
BACKGROUND = 5
SPLIT = 6
FRANSON = 7
BOOTSTRAP = 8
MLE_STARTS = 9
SETTING = 10


def substream(seed: int, *key: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for an independent sub-experiment (e.g. one phase setting)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
