"""
Reproducible random streams.

Every stream is a Philox4x64 counter-based generator keyed by a 64-bit
integer; replication ``r`` of a run with base seed ``s`` uses key ``s + r``,
so serial and parallel runs draw identical numbers. Normal variates are
obtained by inverse-CDF transformation of the uniform stream.
"""

import numpy as np
from scipy.special import ndtri

_TINY = np.finfo(float).tiny
_KEY_MASK = (1 << 64) - 1


def stream(seed: int) -> np.random.Generator:
    """Philox generator for the given 64-bit key."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _KEY_MASK))


def replication_seed(seed_base: int, rep: int) -> int:
    return (int(seed_base) + int(rep)) & _KEY_MASK


def uniform(rng: np.random.Generator, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    return low + (high - low) * rng.random(size)


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    u = rng.random(size)
    # random() may return exactly 0
    u = np.where(u > 0.0, u, _TINY)
    return ndtri(u)
