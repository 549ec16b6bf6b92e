"""Small statistical helpers."""

import numpy as np
from scipy.special import ndtri

DEFAULT_LEVEL = 0.99


def z_value(level: float = DEFAULT_LEVEL) -> float:
    return float(ndtri(0.5 + level / 2.0))


def wilson_interval(successes, trials, level: float = DEFAULT_LEVEL):
    """Wilson score interval for a binomial proportion.

    Args:
        successes: count(s) of successes.
        trials: number of trials (positive).
        level: two-sided confidence level.

    Returns:
        Tuple ``(lo, hi)`` of arrays (or floats for scalar input).
    """
    k = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    z = z_value(level)
    phat = k / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = np.clip(centre - half, 0.0, 1.0)
    hi = np.clip(centre + half, 0.0, 1.0)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def wilson_se(successes, trials, level: float = DEFAULT_LEVEL):
    """Standard error implied by the Wilson interval: half-width over z."""
    lo, hi = wilson_interval(successes, trials, level)
    return (np.asarray(hi) - np.asarray(lo)) / (2.0 * z_value(level))
