"""Coefficients that propagate an initial intensity gap through runs of hits.

While both chains see identical observations, the intensity gap obeys
``g_t <= sum_j c_j g_{t-j}``. Unrolling that chain from the initial window
``e_1..e_q`` gives ``g_k <= sum_i d[k, i] e_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import DomainError, InfeasibleDriftError


@dataclass(frozen=True)
class ContractionTable:
    """Gap propagation coefficients.

    Attributes:
        c: contraction constants c_1..c_q.
        d: array of shape (kmax, q); row k-1 holds d_{k, .}.
        D: prefix sums over k of ``d``.
    """

    c: tuple
    d: np.ndarray
    D: np.ndarray

    @property
    def total(self) -> float:
        return float(sum(self.c))

    def coefficient(self, k: int, i: int) -> float:
        """d_{k,i} with 1-based indices."""
        return float(self.d[k - 1, i - 1])


def _validate(c) -> tuple:
    c = tuple(float(x) for x in np.atleast_1d(c))
    if not c or any(x < 0 or not np.isfinite(x) for x in c):
        raise DomainError("contraction constants must be finite and nonnegative")
    if sum(c) >= 1:
        raise InfeasibleDriftError(f"contraction constants sum to {sum(c):g} >= 1")
    return c


def contraction_coeffs(c, kmax: int) -> ContractionTable:
    """Gap propagation table by dynamic programming.

    For k >= 2, d[k, i] = sum_{j=1}^{min(q, k-2)} c_j d[k-j, i]
    + c_{k+i-2} * 1{1 <= k+i-2 <= q}, with d[1, .] = (1, 0, ..., 0).
    """
    c = _validate(c)
    if kmax < 1:
        raise DomainError("kmax must be positive")
    q = len(c)
    d = np.zeros((kmax, q))
    d[0, 0] = 1.0
    for k in range(2, kmax + 1):
        for i in range(1, q + 1):
            total = 0.0
            for j in range(1, min(q, k - 2) + 1):
                total += c[j - 1] * d[k - j - 1, i - 1]
            m = k + i - 2
            if 1 <= m <= q:
                total += c[m - 1]
            d[k - 1, i - 1] = total
    return ContractionTable(c, d, np.cumsum(d, axis=0))


def composition_sums(c, nmax: int) -> np.ndarray:
    """s(n) = sum over compositions of n into parts <= q of products of c."""
    c = _validate(c)
    q = len(c)
    s = np.zeros(nmax + 1)
    s[0] = 1.0
    for n in range(1, nmax + 1):
        s[n] = sum(c[j - 1] * s[n - j] for j in range(1, min(q, n) + 1))
    return s


def composition_sum_table(c, kmax: int) -> np.ndarray:
    """Closed-form upper bound for the table: entry (k, i) is s(k + i - 2)."""
    c = _validate(c)
    q = len(c)
    s = composition_sums(c, kmax + q)
    out = np.zeros((kmax, q))
    out[0, 0] = 1.0
    for k in range(2, kmax + 1):
        for i in range(1, q + 1):
            out[k - 1, i - 1] = s[k + i - 2]
    return out


def brute_composition_sum(c, n: int) -> float:
    """Enumerate every composition of n explicitly (small n only)."""
    c = _validate(c)
    q = len(c)
    total = 0.0
    for length in range(1, n + 1):
        for parts in product(range(1, q + 1), repeat=length):
            if sum(parts) == n:
                total += float(np.prod([c[p - 1] for p in parts]))
    return total if n > 0 else 1.0
