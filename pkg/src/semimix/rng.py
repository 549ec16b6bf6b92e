"""Deterministic per-replicate random streams.

Every replicate gets its own counter-based Philox stream whose 128-bit key is
derived from ``(base_seed, index)`` with the splitmix64 finalizer. Sub-streams
of one replicate differ only in the high word of the Philox counter, so they
never overlap for any realistic draw count.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of the splitmix64 output function (Steele et al.)."""
    x = (x + GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def stream_key(base_seed: int, index: int) -> int:
    """128-bit Philox key for replicate ``index`` under ``base_seed``."""
    if base_seed < 0 or index < 0:
        raise ValueError("seed and index must be nonnegative")
    lo = splitmix64((base_seed & MASK64) ^ splitmix64(index & MASK64))
    hi = splitmix64(lo ^ GOLDEN ^ (index >> 64))
    return (hi << 64) | lo


def derive_stream(base_seed: int, index: int, sub: int = 0) -> np.random.Generator:
    """Independent generator for replicate ``index``.

    Args:
        base_seed: 64-bit experiment seed.
        index: replicate index.
        sub: sub-stream number within the replicate.

    Returns:
        A ``numpy.random.Generator`` backed by Philox.
    """
    counter = np.array([0, 0, 0, sub], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=stream_key(base_seed, index), counter=counter))


def open_uniforms(gen: np.random.Generator, size) -> np.ndarray:
    """Uniform variates on the open interval (0, 1) with 52-bit resolution.

    Zero is excluded so that quantiles of unbounded laws stay finite.
    """
    k = gen.integers(0, 1 << 52, size=size, dtype=np.int64)
    return (k + 0.5) * 2.0**-52
