"""Observation laws Q(lambda) and the maximal-coupling split of two of them.

Discrete families work on truncated pmf tables: each row is cut at the first
support point where the cumulative mass reaches ``1 - TAIL`` and the residual
mass is put in that last bucket. Sampling, quantiles and coupling all invert
the same tables, so a coupled draw and a plain draw at the same ``u`` agree
bit for bit.

Gaussian families use the closed-form crossing points of two centred normal
densities and invert the piecewise CDFs by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, ndtr, ndtri, xlogy

from .errors import DomainError

TAIL = 1e-12
BISECT_STEPS = 90


def _as_lambda(lam) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(lam, dtype=float))
    if arr.size and not (arr.min() >= 0 and arr.max() < np.inf):
        raise DomainError(f"intensity must be finite and nonnegative, got {lam!r}")
    return arr


def _check_prob(t) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    if arr.size and not (arr.min() >= 0 and arr.max() <= 1):
        raise DomainError(f"probability must lie in [0, 1], got {t!r}")
    return arr


def _count_width(lam_max: float) -> int:
    """Number of Poisson count columns that safely covers the tail."""
    return int(math.ceil(lam_max + 12.0 * math.sqrt(lam_max) + 30.0))


@lru_cache(maxsize=256)
def _log_factorials(width: int):
    k = np.arange(width, dtype=float)
    lgf = gammaln(k + 1.0)
    k.setflags(write=False)
    lgf.setflags(write=False)
    return k, lgf


def _poisson_rows(lam: np.ndarray, width: int) -> np.ndarray:
    k, lgf = _log_factorials(width)
    logp = xlogy(k[None, :], lam[:, None]) - lam[:, None] - lgf[None, :]
    return np.exp(logp)


def _truncate(raw: np.ndarray) -> np.ndarray:
    """Cut each row where cumulative mass reaches 1 - TAIL; residual to the cut."""
    rows = np.arange(raw.shape[0])
    cum = np.cumsum(raw, axis=1)
    reached = cum >= 1.0 - TAIL
    cut = np.where(reached[:, -1], np.argmax(reached, axis=1), raw.shape[1] - 1)
    cols = np.arange(raw.shape[1])
    out = np.where(cols[None, :] < cut[:, None], raw, 0.0)
    before = np.where(cut > 0, cum[rows, np.maximum(cut - 1, 0)], 0.0)
    out[rows, cut] = 1.0 - before
    return out


def _last_positive(mass: np.ndarray) -> np.ndarray:
    n = mass.shape[1]
    return n - 1 - np.argmax(mass[:, ::-1] > 0, axis=1)


def _ginv_rows(cum: np.ndarray, t: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Row-wise generalized inverse inf{k: cum[k] >= t} on a cumulative table.

    When rounding keeps a row's total just below ``t`` the last support point
    with positive mass is returned.
    """
    rows = np.arange(cum.shape[0])
    above = cum >= t[:, None]
    idx = np.argmax(above, axis=1)
    found = above[rows, idx]
    return np.where(found, idx, _last_positive(mass))


def _bisect(fn, t, lo, hi):
    """Smallest x in [lo, hi] with fn(x) >= t for a nondecreasing fn (vectorized).

    A fixed step count makes the result independent of how rows are batched.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        up = fn(mid) >= t
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return hi


@dataclass(frozen=True)
class SimilarityConstant:
    """Rate ``delta`` with TV(Q(l), Q(l')) <= 1 - exp(-delta |l - l'|)."""

    delta: float

    def bound(self, lam, lam2):
        return 1.0 - np.exp(-self.delta * np.abs(np.asarray(lam) - np.asarray(lam2)))


@dataclass(frozen=True)
class CoupledDraws:
    """Vectorized result of one maximal-coupling step."""

    y: np.ndarray
    y_prime: np.ndarray
    hit: np.ndarray
    overlap: np.ndarray


class SeedFamily:
    """Base class for observation laws indexed by a nonnegative intensity."""

    discrete: bool = True
    support: str = "nonneg-integers"

    def density(self, lam: float, y) -> float:
        raise NotImplementedError

    def cdf(self, lam: float, y) -> float:
        raise NotImplementedError

    def quantile(self, lam: float, t: float):
        return self.quantile_batch(np.array([lam], dtype=float), np.array([t], dtype=float))[0]

    def sample(self, lam: float, u: float):
        return self.quantile(lam, u)

    def quantile_batch(self, lam, t) -> np.ndarray:
        raise NotImplementedError

    def sample_batch(self, lam, u) -> np.ndarray:
        return self.quantile_batch(lam, u)

    def couple_batch(self, lam_a, lam_b, u) -> CoupledDraws:
        raise NotImplementedError

    def tv_overlap(self, lam: float, lam2: float):
        raise NotImplementedError

    def similarity_delta(self) -> SimilarityConstant:
        raise NotImplementedError

    def mean_bound(self) -> tuple[float, float]:
        """Constants (m, k) with E[stored Y | lambda] <= m * lambda + k."""
        raise NotImplementedError


# --------------------------------------------------------------------------
# discrete families


@dataclass(frozen=True)
class DiscreteSplit:
    """Decomposition of two pmfs into common part and the two excesses."""

    overlap: float
    common: np.ndarray
    excess_a: np.ndarray
    excess_b: np.ndarray

    @property
    def F(self) -> np.ndarray:
        return np.cumsum(self.common)

    @property
    def G(self) -> np.ndarray:
        return np.cumsum(self.excess_a)

    @property
    def G_prime(self) -> np.ndarray:
        return np.cumsum(self.excess_b)

    def _inv(self, mass, t):
        t = _check_prob(t)
        cum = np.broadcast_to(np.cumsum(mass), (t.size, mass.size))
        return _ginv_rows(cum, t, np.broadcast_to(mass, cum.shape))

    def F_inverse(self, u):
        return int(self._inv(self.common, u)[0])

    def G_inverse(self, t):
        return int(self._inv(self.excess_a, t)[0])

    def G_prime_inverse(self, t):
        return int(self._inv(self.excess_b, t)[0])


class DiscreteFamily(SeedFamily):
    discrete = True
    support = "nonneg-integers"

    def _raw_pmf(self, lam: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def pmf_table(self, lam) -> np.ndarray:
        """Truncated pmf rows, one per intensity; columns are counts 0, 1, ..."""
        return _truncate(self._raw_pmf(_as_lambda(lam)))

    def density(self, lam: float, y) -> float:
        row = self.pmf_table([lam])[0]
        if not float(y).is_integer() or y < 0 or y >= row.size:
            return 0.0
        return float(row[int(y)])

    def cdf(self, lam: float, y) -> float:
        if y < 0:
            return 0.0
        row = self.pmf_table([lam])[0]
        k = min(int(math.floor(y)), row.size - 1)
        return float(min(np.cumsum(row)[k], 1.0))

    def quantile_batch(self, lam, t) -> np.ndarray:
        # Same answer as inverting the truncated table: below the cut the
        # truncated cumulative equals the raw one, and anything beyond it
        # maps to the cut.
        t = _check_prob(t)
        cum = np.cumsum(self._raw_pmf(_as_lambda(lam)), axis=1)
        reached = cum >= 1.0 - TAIL
        last = cum.shape[1] - 1
        cut = np.where(reached[:, -1], np.argmax(reached, axis=1), last)
        above = cum >= t[:, None]
        idx = np.where(above[:, -1], np.argmax(above, axis=1), last)
        return np.minimum(idx, cut).astype(float)

    def tv_overlap(self, lam: float, lam2: float):
        table = self.pmf_table([lam, lam2])
        pa, pb = table
        common = np.minimum(pa, pb)
        overlap = 1.0 if lam == lam2 else float(np.cumsum(common)[-1])
        return overlap, DiscreteSplit(overlap, common, pa - common, pb - common)

    def couple_batch(self, lam_a, lam_b, u) -> CoupledDraws:
        lam_a = _as_lambda(lam_a)
        lam_b = _as_lambda(lam_b)
        u = _check_prob(u)
        n = lam_a.size
        table = self.pmf_table(np.concatenate([lam_a, lam_b]))
        pa, pb = table[:n], table[n:]
        common = np.minimum(pa, pb)
        cum_f = np.cumsum(common, axis=1)
        same = lam_a == lam_b
        overlap = np.where(same, 1.0, cum_f[:, -1])
        ex_a = pa - common
        ex_b = pb - common
        no_excess = ~(ex_a > 0).any(axis=1) | ~(ex_b > 0).any(axis=1)
        hit = (u <= overlap) | same | no_excess
        y_hit = _ginv_rows(cum_f, u, common)
        t = u - overlap
        y_a = _ginv_rows(np.cumsum(ex_a, axis=1), t, ex_a)
        y_b = _ginv_rows(np.cumsum(ex_b, axis=1), t, ex_b)
        y = np.where(hit, y_hit, y_a).astype(float)
        y2 = np.where(hit, y_hit, y_b).astype(float)
        return CoupledDraws(y, y2, hit, overlap)


@dataclass(frozen=True)
class Poisson(DiscreteFamily):
    """Poisson(lambda) counts."""

    kind: str = field(default="poisson", init=False)

    def _raw_pmf(self, lam):
        return _poisson_rows(lam, _count_width(float(lam.max(initial=0.0))))

    def similarity_delta(self):
        return SimilarityConstant(1.0)

    def mean_bound(self):
        return 1.0, 0.0


@dataclass(frozen=True)
class ZeroInflatedPoisson(DiscreteFamily):
    """Mixture Z * Poisson(lambda) with Z ~ Bernoulli(pi).

    ``pi`` is the probability of the Poisson component, so the point mass at
    zero receives the extra weight ``1 - pi``.
    """

    pi: float = 1.0
    kind: str = field(default="zip", init=False)

    def __post_init__(self):
        if not (0.0 < self.pi <= 1.0):
            raise DomainError(f"pi must lie in (0, 1], got {self.pi}")

    def _raw_pmf(self, lam):
        out = self.pi * _poisson_rows(lam, _count_width(float(lam.max(initial=0.0))))
        out[:, 0] += 1.0 - self.pi
        return out

    def similarity_delta(self):
        return SimilarityConstant(self.pi)

    def mean_bound(self):
        return self.pi, 0.0


@dataclass(frozen=True)
class CompoundPoisson(DiscreteFamily):
    """Sum of N ~ Poisson(lambda) iid jumps with a finite integer jump pmf.

    Args:
        jumps: pairs ``(size, probability)`` or a mapping size -> probability.
    """

    jumps: tuple = ((1, 1.0),)
    kind: str = field(default="compound", init=False)

    def __post_init__(self):
        items = self.jumps.items() if isinstance(self.jumps, dict) else self.jumps
        pairs = tuple(sorted((int(k), float(p)) for k, p in items))
        if not pairs or any(k < 0 or p < 0 for k, p in pairs):
            raise DomainError("jump pmf needs nonnegative integer sizes and probabilities")
        if abs(sum(p for _, p in pairs) - 1.0) > 1e-12:
            raise DomainError("jump pmf must sum to 1")
        object.__setattr__(self, "jumps", pairs)

    @property
    def jump_pmf(self) -> np.ndarray:
        top = self.jumps[-1][0]
        pmf = np.zeros(top + 1)
        for k, p in self.jumps:
            pmf[k] += p
        return pmf

    @property
    def mean_jump(self) -> float:
        return sum(k * p for k, p in self.jumps)

    def _raw_pmf(self, lam):
        uniq, inverse = np.unique(lam, return_inverse=True)
        if uniq.size < lam.size:
            return self._raw_pmf(uniq)[inverse.ravel()]
        counts = _count_width(float(lam.max(initial=0.0)))
        powers = _convolution_powers(self.jumps, counts)
        weights = _poisson_rows(lam, counts)
        # each row sums only over its own count range so results do not
        # depend on which other rows share the batch
        own = np.ceil(lam + 12.0 * np.sqrt(lam) + 30.0)
        weights = np.where(np.arange(counts)[None, :] < own[:, None], weights, 0.0)
        out = np.zeros((lam.size, powers.shape[1]))
        for n in range(counts):
            out += weights[:, n : n + 1] * powers[n][None, :]
        return out

    def similarity_delta(self):
        return SimilarityConstant(1.0)

    def mean_bound(self):
        return self.mean_jump, 0.0


@lru_cache(maxsize=64)
def _convolution_powers(jumps: tuple, counts: int) -> np.ndarray:
    top = jumps[-1][0]
    jump = np.zeros(top + 1)
    for k, p in jumps:
        jump[k] += p
    width = (counts - 1) * top + 1
    out = np.zeros((counts, width))
    out[0, 0] = 1.0
    for n in range(1, counts):
        out[n] = np.convolve(out[n - 1], jump)[:width]
    out.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# Gaussian families


def _normal_pieces(var_a, var_b):
    """Crossing point and overlap for centred normals with variances a, b."""
    small = np.minimum(var_a, var_b)
    big = np.maximum(var_a, var_b)
    s = np.sqrt(small)
    S = np.sqrt(big)
    with np.errstate(divide="ignore", invalid="ignore"):
        x2 = np.log(big / small) * small * big / (big - small)
        x = np.sqrt(x2)
        overlap = (2.0 * ndtr(x / S) - 1.0) + 2.0 * ndtr(-x / s)
    degenerate = small == 0
    same = var_a == var_b
    x = np.where(degenerate, 0.0, x)
    overlap = np.where(degenerate, 0.0, overlap)
    overlap = np.where(same, 1.0, overlap)
    return s, S, x, overlap


def _norm_cdf(x, sd):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = ndtr(x / sd)
    return np.where(sd > 0, val, np.asarray(x >= 0, dtype=float))


@dataclass(frozen=True)
class GaussianSplit:
    """Closed-form split of N(0, var_a) and N(0, var_b) at the crossing points."""

    var_a: float
    var_b: float
    overlap: float
    crossing: float

    def _sds(self):
        s, S = math.sqrt(min(self.var_a, self.var_b)), math.sqrt(max(self.var_a, self.var_b))
        return s, S

    def F(self, x):
        """CDF of min(q, q') (total mass equals the overlap)."""
        x = np.asarray(x, dtype=float)
        if self.var_a == self.var_b:
            return _norm_cdf(x, math.sqrt(self.var_a))
        s, S = self._sds()
        return _common_cdf(x, s, S, self.crossing)

    def _excess_cdf(self, x, narrow: bool):
        x = np.asarray(x, dtype=float)
        if self.var_a == self.var_b:
            return np.zeros_like(x)
        s, S = self._sds()
        if narrow:
            return _narrow_excess_cdf(x, s, S, self.crossing)
        return _wide_excess_cdf(x, s, S, self.crossing)

    def G(self, x):
        return self._excess_cdf(x, self.var_a < self.var_b)

    def G_prime(self, x):
        return self._excess_cdf(x, self.var_b < self.var_a)

    def _invert(self, fn, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        S = math.sqrt(max(self.var_a, self.var_b))
        span = 40.0 * max(S, 1e-300)
        return float(_bisect(fn, t, np.full_like(t, -span), np.full_like(t, span))[0])

    def F_inverse(self, u):
        return self._invert(self.F, u)

    def G_inverse(self, t):
        return self._invert(self.G, t)

    def G_prime_inverse(self, t):
        return self._invert(self.G_prime, t)


def _common_cdf(x, s, S, xs):
    # min density is the wide one inside [-x*, x*] and the narrow one outside
    left = _norm_cdf(np.minimum(x, -xs), s)
    mid = _norm_cdf(np.clip(x, -xs, xs), S) - _norm_cdf(-xs, S)
    right = _norm_cdf(np.maximum(x, xs), s) - _norm_cdf(xs, s)
    return left + mid + right


def _narrow_excess_cdf(x, s, S, xs):
    z = np.clip(x, -xs, xs)
    val = (_norm_cdf(z, s) - _norm_cdf(-xs, s)) - (_norm_cdf(z, S) - _norm_cdf(-xs, S))
    return np.where(x < -xs, 0.0, np.maximum(val, 0.0))


def _wide_excess_cdf(x, s, S, xs):
    zl = np.minimum(x, -xs)
    left = np.maximum(_norm_cdf(zl, S) - _norm_cdf(zl, s), 0.0)
    zr = np.maximum(x, xs)
    right = np.maximum((_norm_cdf(zr, S) - _norm_cdf(xs, S)) - (_norm_cdf(zr, s) - _norm_cdf(xs, s)), 0.0)
    return left + right


class GaussianFamily(SeedFamily):
    """Centred normal law whose variance is a function of the intensity."""

    discrete = False
    support = "reals"

    def variance(self, lam):
        raise NotImplementedError

    def density(self, lam: float, y) -> float:
        var = float(self.variance(_as_lambda(lam))[0])
        if var == 0:
            return math.inf if y == 0 else 0.0
        return math.exp(-0.5 * y * y / var) / math.sqrt(2 * math.pi * var)

    def cdf(self, lam: float, y) -> float:
        var = self.variance(_as_lambda(lam))
        return float(_norm_cdf(np.asarray([y], dtype=float), np.sqrt(var))[0])

    def quantile_batch(self, lam, t) -> np.ndarray:
        t = _check_prob(t)
        sd = np.sqrt(self.variance(_as_lambda(lam)))
        with np.errstate(invalid="ignore"):
            return np.where(sd > 0, sd * ndtri(t), 0.0)

    def tv_overlap(self, lam: float, lam2: float):
        va, vb = self.variance(_as_lambda([lam, lam2]))
        _, _, xs, overlap = _normal_pieces(np.array([va]), np.array([vb]))
        ov = float(overlap[0])
        return ov, GaussianSplit(float(va), float(vb), ov, float(xs[0]))

    def couple_batch(self, lam_a, lam_b, u) -> CoupledDraws:
        var_a = self.variance(_as_lambda(lam_a))
        var_b = self.variance(_as_lambda(lam_b))
        u = _check_prob(u)
        s, S, xs, overlap = _normal_pieces(var_a, var_b)
        same = var_a == var_b
        degenerate = (s == 0) & ~same
        hit = (u <= overlap) | same
        span = 40.0 * np.maximum(S, 1e-300)
        lo, hi = -span, span
        t = u - overlap
        y_same = np.where(same & (S > 0), S * ndtri(np.clip(u, 1e-300, 1.0)), 0.0)
        act = ~same & ~degenerate
        safe_s = np.where(act, s, 1.0)
        safe_S = np.where(act, S, 1.0)
        safe_x = np.where(act, xs, 0.0)

        y_common = _bisect(lambda x: _common_cdf(x, safe_s, safe_S, safe_x), u, lo, hi)
        y_narrow = _bisect(lambda x: _narrow_excess_cdf(x, safe_s, safe_S, safe_x), t, lo, hi)
        y_wide = _bisect(lambda x: _wide_excess_cdf(x, safe_s, safe_S, safe_x), t, lo, hi)
        a_narrow = var_a < var_b
        y_a = np.where(hit, y_common, np.where(a_narrow, y_narrow, y_wide))
        y_b = np.where(hit, y_common, np.where(a_narrow, y_wide, y_narrow))
        # a zero variance chain sits at 0, the other draws its own quantile
        wide_q = S * ndtri(np.clip(u, 1e-300, 1.0))
        y_a = np.where(degenerate, np.where(a_narrow, 0.0, wide_q), y_a)
        y_b = np.where(degenerate, np.where(a_narrow, wide_q, 0.0), y_b)
        y_a = np.where(same, y_same, y_a)
        y_b = np.where(same, y_same, y_b)
        return CoupledDraws(y_a, y_b, hit, overlap)

    def mean_bound(self):
        return 1.0, 0.0


@dataclass(frozen=True)
class GaussianZeroMean(GaussianFamily):
    """N(0, lambda)."""

    kind: str = field(default="gaussian", init=False)

    def variance(self, lam):
        return np.asarray(lam, dtype=float)

    def similarity_delta(self):
        raise DomainError("similarity constant requires a volatility floor ω")


@dataclass(frozen=True)
class GaussianWithFloor(GaussianFamily):
    """N(0, max(lambda, omega)); the floor keeps the similarity rate finite."""

    omega: float = 1.0
    kind: str = field(default="gaussian-floor", init=False)

    def __post_init__(self):
        if not (self.omega > 0):
            raise DomainError(f"omega must be positive, got {self.omega}")

    def variance(self, lam):
        return np.maximum(np.asarray(lam, dtype=float), self.omega)

    def similarity_delta(self):
        return SimilarityConstant(1.0 / self.omega)

    def mean_bound(self):
        return 1.0, self.omega


# --------------------------------------------------------------------------
# functional front end


def density(family: SeedFamily, lam: float, y) -> float:
    """pmf or Lebesgue density of Q(lam) at y; zero outside the support."""
    _as_lambda(lam)
    return family.density(lam, y)


def quantile(family: SeedFamily, lam: float, t: float):
    """Generalized inverse inf{x: F(x) >= t} of the CDF of Q(lam)."""
    return family.quantile(lam, t)


def sample(family: SeedFamily, lam: float, u: float):
    """Inverse-transform draw; identical to ``quantile(family, lam, u)``."""
    return family.sample(lam, u)


def tv_overlap(family: SeedFamily, lam: float, lam2: float):
    """Overlap 1 - TV(Q(lam), Q(lam2)) together with the split CDFs."""
    _as_lambda([lam, lam2])
    return family.tv_overlap(lam, lam2)


def similarity_delta(family: SeedFamily) -> SimilarityConstant:
    return family.similarity_delta()
