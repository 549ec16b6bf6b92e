"""Monte Carlo experiments on coalescence, return times and mixing rates.

Replicate ``r`` of an experiment with base seed ``s`` draws only from
``derive_stream(s, r, sub)``. Sub-streams separate the two burn-in runs from
the coupling run, so results do not depend on how replicates are split over
workers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .contraction import ContractionTable, composition_sum_table, contraction_coeffs
from .coupling import couple_batch
from .errors import ConfigurationError, DomainError, InsufficientDataError
from .models import (
    ChainState,
    DriftConstants,
    IntensitySpec,
    default_burn_in,
    lyapunov_level,
    spec_drift_constants,
    stationary_batch,
)
from .parallel import run_partitioned
from .rng import derive_stream, open_uniforms
from .seeds import SeedFamily
from .stats import wilson_interval, wilson_se

log = logging.getLogger(__name__)

BASE_STATE_INDEX = 1 << 62
GAP_RTOL = 1e-9


def coalescence_bound(delta: float, c: float, K: float) -> float:
    """Lower bound exp(-delta K / (1 - c)) on the probability of coalescing."""
    if not (0 <= c < 1):
        raise DomainError("c must lie in [0, 1)")
    return math.exp(-delta * K / (1.0 - c))


def _uniform_block(seed: int, start: int, stop: int, steps: int, sub: int = 0) -> np.ndarray:
    return np.stack([open_uniforms(derive_stream(seed, r, sub), steps) for r in range(start, stop)])


def window_gap(spec: IntensitySpec, ya, la, yb, lb) -> np.ndarray:
    """Intensity gap over the window that drives the next q draws.

    For lag windows at time t this is |lambda_{t+1} - lambda'_{t+1}| plus the
    gaps of the q-1 newest stored intensities.
    """
    gap = np.abs(spec.intensity(ya, la) - spec.intensity(yb, lb))
    for j in range(spec.q - 1):
        gap = gap + np.abs(la[:, j] - lb[:, j])
    return gap


def gap_pair(spec: IntensitySpec, base: ChainState, K: float):
    """Two states with equal observation lags and window gap close to K.

    The second state's newest intensity lag is raised by an amount found by
    bisection; the achieved gap is returned alongside the states.
    """
    ya, la = base.arrays(spec)
    if K == 0:
        return base, base, 0.0

    def gap_for(s):
        lb = la.copy()
        lb[0, 0] += s
        return float(window_gap(spec, ya, la, ya, lb)[0])

    hi = max(K, 1e-6)
    for _ in range(200):
        if gap_for(hi) >= K:
            break
        hi *= 2.0
    else:
        raise DomainError("cannot reach the requested gap: the recursion ignores its intensity lags")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap_for(mid) >= K:
            hi = mid
        else:
            lo = mid
    lb = la.copy()
    lb[0, 0] += hi
    other = ChainState(tuple(ya[0]), tuple(lb[0]))
    return base, other, gap_for(hi)


@dataclass(frozen=True)
class LemmaPoint:
    target_gap: float
    gap: float
    bound: float
    frequency: float
    successes: int
    replicates: int
    se: float
    ci_lo: float
    ci_hi: float
    max_gap_ratio: float
    frequency_ok: bool
    gap_sum_ok: bool


@dataclass(frozen=True)
class LemmaReport:
    delta: float
    c: float
    horizon: int
    base_state: ChainState
    points: list
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_coalescence_lemma(
    spec: IntensitySpec,
    family: SeedFamily,
    gaps,
    replicates: int,
    horizon: int,
    seed: int,
    *,
    base_state: Optional[ChainState] = None,
    burn_in: Optional[int] = None,
    workers: int = 1,
    sigmas: float = 3.0,
) -> LemmaReport:
    """Empirical check of the coalescence bound on a grid of initial gaps.

    For every gap K both chains start with identical observation lags and an
    intensity window gap of K. The fraction of runs where every one of the
    next ``horizon`` draws coincides must be at least
    ``exp(-delta K/(1-c)) - sigmas * se``, and on those runs the summed
    intensity gaps must not exceed ``K/(1-c)``.

    Args:
        base_state: common starting state; by default one approximate
            stationary draw from a dedicated stream.
    """
    delta = family.similarity_delta().delta
    c = sum(spec.contraction)
    if base_state is None:
        burn = default_burn_in(spec) if burn_in is None else burn_in
        u = open_uniforms(derive_stream(seed, BASE_STATE_INDEX), (1, burn))
        yl, ll = stationary_batch(spec, family, u)
        base_state = ChainState(tuple(yl[0]), tuple(ll[0]))
    points, violations = [], []
    for idx, target in enumerate(gaps):
        state_a, state_b, K = gap_pair(spec, base_state, float(target))
        ya, la = state_a.arrays(spec)
        yb, lb = state_b.arrays(spec)

        def task(start, stop, ya=ya, la=la, yb=yb, lb=lb, sub=idx):
            n = stop - start
            u = _uniform_block(seed, start, stop, horizon, sub)
            out = couple_batch(
                spec, family, np.repeat(ya, n, 0), np.repeat(la, n, 0), np.repeat(yb, n, 0), np.repeat(lb, n, 0), u,
                stop_on_miss=True,
            )
            return {"success": out.first_miss == 0, "gap_sum": out.gap_sum}

        res = run_partitioned(task, replicates, workers)
        success = res["success"]
        k = int(success.sum())
        freq = k / replicates
        lo, hi = wilson_interval(k, replicates)
        se = float(wilson_se(k, replicates))
        bound = coalescence_bound(delta, c, K)
        limit = K / (1.0 - c)
        sums = res["gap_sum"][success]
        ratio = float(sums.max() / limit) if (k and limit > 0) else 0.0
        gap_ok = bool(np.all(sums <= limit * (1 + GAP_RTOL) + 1e-15))
        freq_ok = freq >= bound - sigmas * se
        points.append(LemmaPoint(float(target), K, bound, freq, k, replicates, se, lo, hi, ratio, freq_ok, gap_ok))
        if not freq_ok:
            violations.append(f"coalescence frequency {freq:.6g} below bound {bound:.6g} - {sigmas}se at K={K:.6g}")
        if not gap_ok:
            violations.append(f"gap sum exceeds K/(1-c) at K={K:.6g}")
    return LemmaReport(delta, c, horizon, base_state, points, violations)


# --------------------------------------------------------------------------
# drift levels and return times


def stopping_constants(drift: DriftConstants):
    """Return ``(eta, C1)`` with eta = 2/(1+kappa), C1 = (2 a0 + 2)/(1-kappa)."""
    k = drift.kappa
    return 2.0 / (1.0 + k), (2.0 * drift.a0 + 2.0) / (1.0 - k)


def state_at_level(spec: IntensitySpec, drift: DriftConstants, level: float) -> ChainState:
    """State with zero observation lags, equal intensity lags and given level."""
    y = np.zeros((1, spec.p))

    def level_of(x):
        return float(lyapunov_level(drift, spec, y, np.full((1, spec.q), x))[0])

    if level_of(0.0) > level:
        raise DomainError(f"level {level:g} is below the smallest reachable level {level_of(0.0):g}")
    hi = 1.0
    while level_of(hi) < level:
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("level unreachable: the recursion ignores its intensity lags")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if level_of(mid) >= level:
            hi = mid
        else:
            lo = mid
    return ChainState((0.0,) * spec.p, (hi,) * spec.q)


def mean_level(spec, drift, ya, la, yb, lb) -> np.ndarray:
    """W = (V(X) + V(X'))/2 for two batches of lag windows."""
    return 0.5 * (lyapunov_level(drift, spec, ya, la) + lyapunov_level(drift, spec, yb, lb))


def trace_levels(spec, family, drift, ya, la, yb, lb, uniforms):
    """Levels, window gaps and hits along coupled runs.

    Returns:
        ``(W, K, hits)`` with W and K of shape (R, H+1) indexed by time
        0..H and hits of shape (R, H) for draws 1..H.
    """
    R, H = uniforms.shape
    W = np.empty((R, H + 1))
    K = np.empty((R, H + 1))
    hits = np.zeros((R, H), dtype=bool)
    W[:, 0] = mean_level(spec, drift, ya, la, yb, lb)
    K[:, 0] = window_gap(spec, ya, la, yb, lb)

    def observe(t, hit, a, la_, b, lb_):
        hits[:, t - 1] = hit
        W[:, t] = mean_level(spec, drift, a, la_, b, lb_)
        K[:, t] = window_gap(spec, a, la_, b, lb_)

    couple_batch(spec, family, ya, la, yb, lb, uniforms, observer=observe)
    return W, K, hits


@dataclass(frozen=True)
class ReturnMoment:
    level_start: float
    eta: float
    C1: float
    mean: float
    se: float
    replicates: int
    truncated: int
    ok: bool


def first_return_moment(
    spec: IntensitySpec,
    family: SeedFamily,
    drift: DriftConstants,
    level: float,
    replicates: int,
    seed: int,
    *,
    max_steps: int = 200,
    spread: float = 0.25,
    workers: int = 1,
    sigmas: float = 3.0,
) -> ReturnMoment:
    """Monte Carlo mean of eta^tau_1 from a pair with mean level ``level``.

    Chain A starts at level ``(1+spread) level`` and chain B at
    ``(1-spread) level``; tau_1 is the first time with W_t <= C1. Runs still
    above C1 after ``max_steps`` count with tau_1 = max_steps, which biases
    the mean downwards, and their number is reported.
    """
    eta, C1 = stopping_constants(drift)
    sa = state_at_level(spec, drift, (1 + spread) * level)
    sb = state_at_level(spec, drift, (1 - spread) * level)
    ya, la = sa.arrays(spec)
    yb, lb = sb.arrays(spec)
    w0 = float(mean_level(spec, drift, ya, la, yb, lb)[0])

    def task(start, stop):
        n = stop - start
        u = _uniform_block(seed, start, stop, max_steps)
        W, _, _ = trace_levels(spec, family, drift, *(np.repeat(x, n, 0) for x in (ya, la, yb, lb)), u)
        below = W <= C1
        found = below.any(axis=1)
        tau = np.where(found, np.argmax(below, axis=1), max_steps)
        return {"tau": tau, "found": found}

    res = run_partitioned(task, replicates, workers)
    vals = eta ** res["tau"].astype(float)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(replicates))
    return ReturnMoment(w0, eta, C1, mean, se, replicates, int((~res["found"]).sum()), mean <= w0 + sigmas * se)


def default_trial_length(n: int, c: float, C1: float, p: int, rho_target: float = 0.5) -> int:
    """Trial length D_n with c^(D_n - p + 1) C1 <= rho_target^sqrt(n).

    The number of contracting steps is ``ceil(sqrt(n) log(rho)/log(c) +
    log(C1)/|log c|)``, so D_n grows like a constant times sqrt(n).
    """
    if c <= 0:
        return p
    steps = math.sqrt(n) * math.log(rho_target) / math.log(c) + max(math.log(C1), 0.0) / -math.log(c)
    return max(p, int(math.ceil(steps)) + p - 1)


@dataclass(frozen=True)
class TrialSchedule:
    """Trial start times and their outcomes for one coupled run.

    ``taus[i]`` is a time t with W_t <= C1; its trial covers draws
    ``t+1..t+D_n``. ``outcomes[i]`` is True when the first p draws of the
    trial hit and the window gap after the trial is at most ``target``.
    """

    C1: float
    D_n: int
    target: float
    taus: tuple
    outcomes: tuple
    truncated: bool


def schedule_from_trace(W, K, hits, C1: float, D_n: int, p: int, target: float) -> TrialSchedule:
    """Extract retarded return times and trial outcomes from one trace."""
    H = hits.size
    below = np.flatnonzero(W <= C1)
    taus, outcomes = [], []
    truncated = False
    earliest = 0
    while True:
        nxt = below[below >= earliest]
        if nxt.size == 0:
            truncated = True
            break
        tau = int(nxt[0])
        if tau + D_n > H:
            truncated = True
            break
        start_hits = bool(np.all(hits[tau : tau + p]))
        outcomes.append(start_hits and bool(K[tau + D_n] <= target))
        taus.append(tau)
        earliest = tau + D_n
    return TrialSchedule(C1, D_n, target, tuple(taus), tuple(outcomes), truncated)


def _pi_pairs(spec, family, seed, start, stop, burn_in):
    ua = _uniform_block(seed, start, stop, burn_in, sub=0)
    ub = _uniform_block(seed, start, stop, burn_in, sub=1)
    n = stop - start
    both = stationary_batch(spec, family, np.concatenate([ua, ub]))
    return both[0][:n], both[1][:n], both[0][n:], both[1][n:]


def trial_schedules(
    spec: IntensitySpec,
    family: SeedFamily,
    drift: DriftConstants,
    n: int,
    horizon: int,
    replicates: int,
    seed: int,
    *,
    D_n: Optional[int] = None,
    rho_target: float = 0.5,
    burn_in: Optional[int] = None,
    init: Optional[tuple] = None,
    workers: int = 1,
) -> list:
    """Trial schedules for ``replicates`` coupled runs.

    Both chains start from independent approximate stationary draws unless
    ``init = (state_a, state_b)`` is given.
    """
    _, C1 = stopping_constants(drift)
    c = sum(spec.contraction)
    D_n = default_trial_length(n, c, C1, spec.p, rho_target) if D_n is None else D_n
    if D_n < spec.p:
        raise DomainError("trial length must be at least p")
    target = rho_target ** math.sqrt(n)
    burn = default_burn_in(spec) if burn_in is None else burn_in

    def task(start, stop):
        m = stop - start
        if init is None:
            ya, la, yb, lb = _pi_pairs(spec, family, seed, start, stop, burn)
        else:
            (ya, la), (yb, lb) = init[0].arrays(spec), init[1].arrays(spec)
            ya, la, yb, lb = (np.repeat(x, m, 0) for x in (ya, la, yb, lb))
        u = _uniform_block(seed, start, stop, horizon, sub=2)
        W, K, hits = trace_levels(spec, family, drift, ya, la, yb, lb, u)
        return {"W": W, "K": K, "hits": hits}

    res = run_partitioned(task, replicates, workers)
    return [
        schedule_from_trace(res["W"][r], res["K"][r], res["hits"][r], C1, D_n, spec.p, target)
        for r in range(replicates)
    ]


def run_trial_schedule(
    spec: IntensitySpec,
    family: SeedFamily,
    drift: DriftConstants,
    D_n: Optional[int],
    horizon: int,
    seed: int,
    *,
    n: int = 1,
    index: int = 0,
    rho_target: float = 0.5,
    burn_in: Optional[int] = None,
    init: Optional[tuple] = None,
) -> TrialSchedule:
    """Trial schedule of a single coupled run (replicate ``index``)."""
    _, C1 = stopping_constants(drift)
    c = sum(spec.contraction)
    D_n = default_trial_length(n, c, C1, spec.p, rho_target) if D_n is None else D_n
    if D_n < spec.p:
        raise DomainError("trial length must be at least p")
    if init is None:
        burn = default_burn_in(spec) if burn_in is None else burn_in
        ya, la, yb, lb = _pi_pairs(spec, family, seed, index, index + 1, burn)
    else:
        (ya, la), (yb, lb) = init[0].arrays(spec), init[1].arrays(spec)
    u = _uniform_block(seed, index, index + 1, horizon, sub=2)
    W, K, hits = trace_levels(spec, family, drift, ya, la, yb, lb, u)
    return schedule_from_trace(W[0], K[0], hits[0], C1, D_n, spec.p, rho_target ** math.sqrt(n))


def return_increment_bound(drift: DriftConstants, D_n: int) -> float:
    """eta^D_n (1 + (a0 + kappa C1)/(1 - kappa))."""
    eta, C1 = stopping_constants(drift)
    return eta**D_n * (1.0 + (drift.a0 + drift.kappa * C1) / (1.0 - drift.kappa))


# --------------------------------------------------------------------------
# mixing coefficients


@dataclass
class MixingEstimate:
    """Coupling bound on beta-mixing coefficients at several lags.

    ``beta_hat[i]`` is the fraction of replicates whose two chains still
    produced different observations at some step in ``[n_i, horizon]``.
    Steps beyond the horizon are not seen, so the estimate is biased low.
    """

    n_grid: np.ndarray
    beta_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    counts: np.ndarray
    replicates: int
    horizon: int
    last_miss: np.ndarray = field(repr=False, default=None)

    def rows(self):
        for i, n in enumerate(self.n_grid):
            yield int(n), float(self.beta_hat[i]), float(self.ci_lo[i]), float(self.ci_hi[i])


def estimate_beta(
    spec: IntensitySpec,
    family: SeedFamily,
    n_grid,
    replicates: int,
    horizon: Optional[int],
    seed: int,
    *,
    burn_in: Optional[int] = None,
    workers: int = 1,
) -> MixingEstimate:
    """Estimate P(Y_m != Y'_m for some m in [n, horizon]) for each n.

    Each replicate starts the two chains from independent approximate
    stationary draws (burn-in from zero on sub-streams 0 and 1) and couples
    them with sub-stream 2.
    """
    n_grid = np.asarray(sorted(int(n) for n in n_grid))
    if n_grid.size == 0 or n_grid[0] < 1:
        raise ConfigurationError("n-grid must contain positive integers")
    n_max = int(n_grid[-1])
    if horizon is None:
        horizon = 5 * n_max
    if horizon < n_max:
        raise ConfigurationError(f"horizon {horizon} is shorter than the largest lag {n_max}")
    if horizon < 5 * n_max:
        log.warning("horizon %d is below the recommended %d", horizon, 5 * n_max)
    spec_drift_constants(spec, family)
    burn = default_burn_in(spec) if burn_in is None else burn_in

    def task(start, stop):
        ya, la, yb, lb = _pi_pairs(spec, family, seed, start, stop, burn)
        u = _uniform_block(seed, start, stop, horizon, sub=2)
        out = couple_batch(spec, family, ya, la, yb, lb, u)
        return {"last_miss": out.last_miss}

    last_miss = run_partitioned(task, replicates, workers)["last_miss"]
    counts = np.array([int(np.sum(last_miss >= n)) for n in n_grid])
    lo, hi = wilson_interval(counts, replicates)
    return MixingEstimate(n_grid, counts / replicates, np.asarray(lo), np.asarray(hi), counts, replicates, horizon, last_miss)


@dataclass(frozen=True)
class RateFit:
    """Least-squares fits of log beta on sqrt(n) and, for comparison, on n."""

    C: float
    rho: float
    slope: float
    intercept: float
    slope_se: float
    r2: float
    residuals: np.ndarray
    geometric_C: float
    geometric_rho: float
    geometric_r2: float
    points: int

    @property
    def slope_significant(self) -> bool:
        """Slope below zero by more than three standard errors."""
        return self.slope + 3.0 * self.slope_se < 0


def fit_subgeometric_rate(estimate: MixingEstimate) -> RateFit:
    """Fit beta_n ~ C rho^sqrt(n) over grid points with positive estimates."""
    n = np.asarray(estimate.n_grid, dtype=float)
    beta = np.asarray(estimate.beta_hat, dtype=float)
    keep = beta > 0
    if keep.sum() < 3:
        raise InsufficientDataError(f"need at least 3 positive estimates, have {int(keep.sum())}")
    n, logb = n[keep], np.log(beta[keep])
    sub = stats.linregress(np.sqrt(n), logb)
    geo = stats.linregress(n, logb)
    residuals = logb - (sub.intercept + sub.slope * np.sqrt(n))
    return RateFit(
        C=float(math.exp(sub.intercept)),
        rho=float(math.exp(sub.slope)),
        slope=float(sub.slope),
        intercept=float(sub.intercept),
        slope_se=float(sub.stderr),
        r2=float(sub.rvalue**2),
        residuals=residuals,
        geometric_C=float(math.exp(geo.intercept)),
        geometric_rho=float(math.exp(geo.slope)),
        geometric_r2=float(geo.rvalue**2),
        points=int(keep.sum()),
    )
