import math

import numpy as np
import pytest

from conftest import assert_close
from semimix.errors import ConfigurationError, InsufficientDataError
from semimix.mixing import (
    MixingEstimate,
    coalescence_bound,
    default_trial_length,
    estimate_beta,
    first_return_moment,
    fit_subgeometric_rate,
    gap_pair,
    mean_level,
    return_increment_bound,
    run_trial_schedule,
    schedule_from_trace,
    state_at_level,
    stopping_constants,
    trial_schedules,
    verify_coalescence_lemma,
    window_gap,
)
from semimix.models import ChainState, IntensitySpec, Linear, drift_constants, spec_drift_constants


@pytest.fixture
def kappa07():
    return IntensitySpec(Linear(1.0, (0.3,), (0.4,)))


def test_coalescence_bound_values():
    assert coalescence_bound(1.0, 0.5, 0.2) == pytest.approx(math.exp(-0.4))
    assert round(coalescence_bound(1.0, 0.5, 0.2), 4) == 0.6703
    assert coalescence_bound(1.0, 0.5, 0.0) == 1.0


@pytest.mark.parametrize("K", [0.0, 0.05, 0.5, 3.0])
def test_gap_pair_hits_target(linear22, K):
    base = ChainState((2.0, 1.0), (3.0, 4.0))
    a, b, got = gap_pair(linear22, base, K)
    assert a.y_lags == b.y_lags
    assert_close(got, K, tol=1e-12, rel=1e-12)
    ya, la = a.arrays(linear22)
    yb, lb = b.arrays(linear22)
    assert_close(window_gap(linear22, ya, la, yb, lb), got, tol=1e-15)


def test_lemma_check_small_run_is_worker_independent(linear11, poisson):
    kw = dict(gaps=(0.1, 0.5), replicates=600, horizon=100, seed=5, burn_in=300)
    one = verify_coalescence_lemma(linear11, poisson, workers=1, **kw)
    two = verify_coalescence_lemma(linear11, poisson, workers=3, **kw)
    assert one.points == two.points
    assert one.ok
    assert one.points[0].frequency >= one.points[1].frequency


def test_stopping_constants_example():
    eta, C1 = stopping_constants(drift_constants(1.0, (0.3,), (0.4,)))
    assert_close(eta, 2 / 1.7, tol=1e-15)
    assert_close(C1, 4 / 0.3, tol=1e-12)


def test_state_at_level(kappa07, poisson):
    d = spec_drift_constants(kappa07, poisson)
    s = state_at_level(kappa07, d, 26.0)
    y, lam = s.arrays(kappa07)
    assert_close(mean_level(kappa07, d, y, lam, y, lam), 26.0, tol=1e-9)


def test_return_moment_small_run(kappa07, poisson):
    d = spec_drift_constants(kappa07, poisson)
    _, C1 = stopping_constants(d)
    res = first_return_moment(kappa07, poisson, d, 2 * C1, 400, seed=3)
    assert res.ok and res.truncated == 0
    assert_close(res.level_start, 2 * C1, tol=1e-9)
    assert 1.0 < res.mean < res.level_start


@pytest.mark.parametrize("n", [1, 4, 16, 100])
@pytest.mark.parametrize("c,C1,p", [(0.5, 20.0, 1), (0.7, 13.3, 2), (0.2, 1.0, 3)])
def test_trial_length_contracts_enough(n, c, C1, p):
    D = default_trial_length(n, c, C1, p)
    assert D >= p
    assert c ** (D - p + 1) * C1 <= 0.5 ** math.sqrt(n) * (1 + 1e-12)


def test_schedule_from_synthetic_trace():
    C1, D, p = 10.0, 3, 1
    W = np.array([20, 5, 5, 5, 5, 30, 30, 8, 8, 8, 8, 8], dtype=float)
    K = np.array([9, 9, 9, 9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 2.0, 2.0])
    hits = np.array([1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 1], dtype=bool)
    s = schedule_from_trace(W, K, hits, C1, D, p, target=0.5)
    # returns at 1, then >= 4 (W_4 = 5), then >= 7 (W_7 = 8); 7 + 3 = 10 <= 11
    assert s.taus == (1, 4, 7)
    assert s.outcomes == (True, True, False)
    assert s.truncated


def test_trial_schedules_respect_spacing(linear11, poisson):
    d = spec_drift_constants(linear11, poisson)
    scheds = trial_schedules(linear11, poisson, d, 4, 300, 20, seed=2, burn_in=300)
    for s in scheds:
        assert all(b - a >= s.D_n for a, b in zip(s.taus, s.taus[1:]))
    one = run_trial_schedule(linear11, poisson, d, None, 300, 2, n=4, index=7, burn_in=300)
    assert one == scheds[7]


def test_return_increment_bound_formula(kappa07):
    d = drift_constants(1.0, (0.3,), (0.4,))
    eta, C1 = stopping_constants(d)
    assert_close(return_increment_bound(d, 5), eta**5 * (1 + (1.0 + 0.7 * C1) / 0.3), tol=1e-12)


def test_beta_estimate_is_monotone_and_worker_independent(linear11, poisson):
    kw = dict(n_grid=(1, 2, 4, 8, 16), replicates=1500, horizon=80, seed=4, burn_in=300)
    a = estimate_beta(linear11, poisson, workers=1, **kw)
    b = estimate_beta(linear11, poisson, workers=4, **kw)
    assert np.array_equal(a.beta_hat, b.beta_hat)
    assert np.all(np.diff(a.beta_hat) <= 0)
    assert np.all(a.ci_lo <= a.beta_hat) and np.all(a.beta_hat <= a.ci_hi)
    assert list(a.rows())[0][0] == 1


def test_beta_estimate_rejects_short_horizon(linear11, poisson):
    with pytest.raises(ConfigurationError):
        estimate_beta(linear11, poisson, (1, 64), 10, 32, seed=0)


def _estimate(n, beta):
    n = np.asarray(n)
    beta = np.asarray(beta, dtype=float)
    zeros = np.zeros_like(beta)
    return MixingEstimate(n, beta, zeros, zeros, (beta * 1000).astype(int), 1000, 100)


def test_rate_fit_recovers_exact_curve():
    n = np.array([1, 4, 9, 16, 25])
    fit = fit_subgeometric_rate(_estimate(n, 2.0 * 0.3 ** np.sqrt(n)))
    assert_close(fit.C, 2.0, rel=1e-10, tol=0)
    assert_close(fit.rho, 0.3, rel=1e-10, tol=0)
    assert fit.r2 == pytest.approx(1.0)


def test_rate_fit_needs_three_points():
    with pytest.raises(InsufficientDataError):
        fit_subgeometric_rate(_estimate([1, 4, 9], [0.2, 0.01, 0.0]))
