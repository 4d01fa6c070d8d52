"""
Seeding contract: every task draws from its own counter-based stream derived
from (root seed, task keys), so results never depend on scheduling.
"""

from typing import Iterable

import numpy as np

SEED_MASK = (1 << 64) - 1


def _keys(keys: Iterable[int]) -> tuple:
    return tuple(int(k) & SEED_MASK for k in keys)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for the task identified by `keys`."""
    seq = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=_keys(keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for the task identified by `keys`."""
    seq = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=_keys(keys))
    return np.random.Generator(np.random.Philox(seq))


def point_keys(x: np.ndarray) -> tuple:
    """Integer keys encoding the exact bit pattern of a point."""
    bits = np.ascontiguousarray(np.asarray(x, dtype=np.float64)).view(np.uint64)
    return tuple(int(b) for b in bits.ravel())
