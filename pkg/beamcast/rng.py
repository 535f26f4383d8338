# beamcast/rng.py
# Counter-based streams: NumPy Philox keyed by (purpose, seed XOR trial).

from enum import IntEnum

import numpy as np

MASK64 = (1 << 64) - 1


class Purpose(IntEnum):
    PLACEMENT = 1
    RESAMPLE = 2
    SOURCE = 3
    POWER_START = 4
    MOMENT = 5
    QUADRATURE = 6
    HOEFFDING = 7
    BLOCK_SUITE = 8
    SUPERPOSITION = 9
    KERNEL = 10


def stream_key(seed: int, trial: int, purpose: int) -> int:
    """128-bit Philox key; the high word names the purpose."""
    return ((int(purpose) & MASK64) << 64) | ((int(seed) ^ int(trial)) & MASK64)


def derive_rng(seed: int, trial: int = 0, purpose: int = Purpose.PLACEMENT) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, trial, purpose)))
