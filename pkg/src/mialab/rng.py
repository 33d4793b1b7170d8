"""Deterministic random-stream derivation.

All randomness in the package flows from integer key tuples through
numpy's SeedSequence, so any unit of work (a model, a target, a query)
can rebuild its own stream independently of execution order.
"""

from __future__ import annotations

import numpy as np

# Tags namespace the derived streams; values are arbitrary but frozen.
TAG_SPLITS = 11
TAG_MODEL = 12
TAG_TARGET_CHOICE = 13
TAG_TARGET_SAMPLE = 14
TAG_ATTACK = 15
TAG_ALT_LABEL = 16


def substream(*keys: int) -> np.random.Generator:
    """Return a Generator keyed by the given non-negative integers."""
    entropy = []
    for k in keys:
        k = int(k)
        if k < 0:
            raise ValueError(f"stream keys must be non-negative, got {k}")
        entropy.append(k)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into a single 63-bit seed integer."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))
