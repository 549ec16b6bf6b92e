import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semimix.coupling import (
    CoupledState,
    absorption_violation,
    couple_batch,
    coupled_step,
    first_coalescence,
    maximal_couple_draw,
    run_coupled,
    run_coupled_uniforms,
)
from semimix.models import GARCH, ChainState, IntensitySpec, Linear, stationary_draw
from semimix.rng import derive_stream, open_uniforms
from semimix.seeds import GaussianWithFloor, Poisson


def test_single_draw_hit_and_miss(poisson):
    overlap = poisson.tv_overlap(1.0, 1.7)[0]
    hit = maximal_couple_draw(poisson, 1.0, 1.7, overlap / 2)
    assert hit.hit and hit.y == hit.y_prime
    miss = maximal_couple_draw(poisson, 1.0, 1.7, (1 + overlap) / 2)
    assert not miss.hit and miss.y != miss.y_prime
    assert miss.overlap == pytest.approx(overlap)


@pytest.mark.parametrize("hits,expected", [([], None), ([True] * 4, 1), ([False, True, True], 2), ([True, False], None)])
def test_first_coalescence(hits, expected):
    assert first_coalescence(hits) == expected


def test_identical_chains_always_hit(linear11, poisson):
    s = ChainState((3.0,), (4.0,))
    log = run_coupled(s, s, linear11, poisson, 50, derive_stream(0, 0))
    assert log.hit.all()
    assert np.array_equal(log.y, log.y_prime)
    assert log.first_coalescence == 1


def _random_pairs(spec, fam, rows, seed):
    ya = np.zeros((rows, spec.p))
    yb = np.zeros((rows, spec.p))
    rng = np.random.default_rng(seed)
    la = rng.exponential(5.0, (rows, spec.q))
    lb = rng.exponential(5.0, (rows, spec.q))
    return ya, la, yb, lb


def test_retirement_does_not_change_results(linear11, poisson):
    ya, la, yb, lb = _random_pairs(linear11, poisson, 300, 1)
    u = open_uniforms(derive_stream(2, 0), (300, 60))
    fast = couple_batch(linear11, poisson, ya, la, yb, lb, u)
    full = couple_batch(linear11, poisson, ya, la, yb, lb, u, record=True)
    assert np.array_equal(fast.last_miss, full.last_miss)
    assert np.array_equal(fast.first_miss, full.first_miss)
    assert np.allclose(fast.gap_sum, full.gap_sum, rtol=0, atol=0)


def test_rows_do_not_depend_on_batch(linear22, poisson):
    ya, la, yb, lb = _random_pairs(linear22, poisson, 40, 5)
    u = open_uniforms(derive_stream(6, 0), (40, 30))
    whole = couple_batch(linear22, poisson, ya, la, yb, lb, u, record=True)
    for r in (0, 17, 39):
        one = couple_batch(linear22, poisson, ya[r : r + 1], la[r : r + 1], yb[r : r + 1], lb[r : r + 1], u[r : r + 1], record=True)
        for key in whole.record:
            assert np.array_equal(whole.record[key][r], one.record[key][0])


@given(st.integers(0, 2**32), st.floats(0.0, 30.0), st.floats(0.0, 30.0))
@settings(max_examples=60, deadline=None)
def test_coalesced_chains_stay_together(seed, l1, l2):
    spec = IntensitySpec(Linear(1.0, (0.3,), (0.5,)))
    log = run_coupled(ChainState((0.0,), (l1,)), ChainState((0.0,), (l2,)), spec, Poisson(), 80, derive_stream(seed, 0))
    assert absorption_violation(log, spec.p) is None
    if log.first_coalescence is not None:
        tail = slice(log.first_coalescence - 1, None)
        assert np.array_equal(log.y[tail], log.y_prime[tail])


def test_logged_intensities_follow_recursion(linear11, poisson):
    a = ChainState((0.0,), (1.0,))
    b = ChainState((0.0,), (9.0,))
    u = open_uniforms(derive_stream(4, 0), 40)
    log = run_coupled_uniforms(a, b, linear11, poisson, u)
    lam = 1.0
    y_prev = 0.0
    for t in range(40):
        lam = 1.0 + 0.3 * y_prev + 0.5 * lam
        assert log.lam[t] == pytest.approx(lam)
        y_prev = log.y[t]


def test_coupled_step_matches_logged_run(linear11, poisson):
    a = ChainState((1.0,), (2.0,))
    b = ChainState((0.0,), (6.0,))
    u = open_uniforms(derive_stream(9, 0), 5)
    log = run_coupled_uniforms(a, b, linear11, poisson, u)
    state = CoupledState(a, b)
    for t in range(5):
        state = coupled_step(state, linear11, poisson, u[t])
        assert state.hits[-1] == bool(log.hit[t])
        assert state.gap == pytest.approx(log.gap[t])
    assert state.chain_a == log.final.chain_a and state.chain_b == log.final.chain_b


def test_continuous_chains_merge_after_tiny_gap():
    spec = IntensitySpec(Linear(0.5, (0.1,), (0.3,)), GARCH)
    fam = GaussianWithFloor(0.5)
    a = ChainState((1.0,), (1.0,))
    b = ChainState((1.0,), (1.0 + 1e-3,))
    log = run_coupled(a, b, spec, fam, 60, derive_stream(3, 0))
    assert log.hit.all()
    assert log.gap[-1] == 0.0
    assert np.array_equal(log.y[-10:], log.y_prime[-10:])


def test_log_rows_follow_column_order(linear11, poisson):
    s = stationary_draw(linear11, poisson, 100, derive_stream(1, 0))
    log = run_coupled(s, ChainState.zero(linear11), linear11, poisson, 3, derive_stream(1, 1))
    rows = list(log.rows())
    assert [r[0] for r in rows] == [1, 2, 3]
    assert all(len(r) == 7 for r in rows)
    with pytest.raises(ValueError):
        run_coupled(s, s, linear11, poisson, 0, derive_stream(1, 1))
