import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from conftest import assert_close
from semimix import seeds
from semimix.errors import DomainError
from semimix.seeds import CompoundPoisson, GaussianWithFloor, GaussianZeroMean, Poisson, ZeroInflatedPoisson

lams = st.floats(0.0, 40.0, allow_nan=False)
probs = st.floats(1e-9, 1 - 1e-9)


def brute_overlap(pmf_a, pmf_b):
    return float(np.minimum(pmf_a, pmf_b).sum())


def compound_pmf_oracle(lam, jumps, width):
    """Sum over Poisson counts of Poisson weight times n-fold jump convolution."""
    jump = np.zeros(width)
    for k, p in jumps:
        jump[k] = p
    out = np.zeros(width)
    power = np.zeros(width)
    power[0] = 1.0
    for n in range(0, 200):
        out += stats.poisson.pmf(n, lam) * power
        power = np.convolve(power, jump)[:width]
    return out


def test_poisson_density_matches_scipy(poisson):
    assert poisson.density(1.0, 0) == pytest.approx(math.exp(-1), abs=1e-15)
    for lam in (0.3, 1.0, 7.5, 30.0):
        for y in range(0, 40, 3):
            assert_close(poisson.density(lam, y), stats.poisson.pmf(y, lam), tol=1e-12)


def test_density_off_support_is_zero(poisson):
    assert poisson.density(2.0, 1.5) == 0.0
    assert poisson.density(2.0, -1) == 0.0
    assert poisson.density(0.0, 0) == 1.0


@pytest.mark.parametrize("lam,lam2", [(1.0, 2.0), (1.0, 1.7), (0.0, 3.0), (10.0, 12.5)])
def test_poisson_overlap_matches_brute_force(poisson, lam, lam2):
    k = np.arange(200)
    oracle = brute_overlap(stats.poisson.pmf(k, lam), stats.poisson.pmf(k, lam2))
    overlap, split = poisson.tv_overlap(lam, lam2)
    assert_close(overlap, oracle, tol=1e-11)
    assert_close(split.G[-1], 1 - oracle, tol=1e-11)
    assert_close(split.G_prime[-1], 1 - oracle, tol=1e-11)


def test_zip_overlap_matches_brute_force():
    fam = ZeroInflatedPoisson(0.6)
    k = np.arange(200)

    def pmf(lam):
        out = 0.6 * stats.poisson.pmf(k, lam)
        out[0] += 0.4
        return out

    assert_close(fam.tv_overlap(1.0, 2.5)[0], brute_overlap(pmf(1.0), pmf(2.5)), tol=1e-11)
    assert_close(fam.density(2.5, 0), pmf(2.5)[0], tol=1e-14)


@pytest.mark.parametrize("lam", [0.0, 0.7, 4.0, 15.0])
def test_compound_pmf_matches_convolution_oracle(lam):
    jumps = ((1, 0.5), (2, 0.3), (4, 0.2))
    fam = CompoundPoisson(jumps)
    table = fam.pmf_table([lam])[0]
    oracle = compound_pmf_oracle(lam, jumps, table.size)
    assert_close(table[:-1], oracle[:-1], tol=1e-12)
    assert_close(fam.mean_jump, 0.5 + 0.6 + 0.8)


@pytest.mark.parametrize("v,V", [(1.0, 1.44), (0.5, 3.0), (2.0, 2.1)])
def test_gaussian_overlap_matches_quadrature(v, V):
    fam = GaussianZeroMean()
    sa, sb = math.sqrt(v), math.sqrt(V)

    def diff(x):
        return stats.norm.pdf(x, scale=sa) - stats.norm.pdf(x, scale=sb)

    kink = optimize.brentq(diff, 1e-9, 50.0)
    oracle = 2 * sum(
        integrate.quad(lambda x: min(stats.norm.pdf(x, scale=sa), stats.norm.pdf(x, scale=sb)), a, b, epsabs=1e-14)[0]
        for a, b in ((0.0, kink), (kink, 60.0))
    )
    overlap, split = fam.tv_overlap(v, V)
    assert_close(overlap, oracle, tol=1e-9)
    assert_close(split.G(np.inf), 1 - overlap, tol=1e-12)


def test_gaussian_floor_clamps_variance():
    fam = GaussianWithFloor(0.5)
    assert fam.tv_overlap(0.1, 0.3)[0] == 1.0
    assert fam.density(0.0, 0.0) == pytest.approx(stats.norm.pdf(0, scale=math.sqrt(0.5)))
    assert fam.similarity_delta().delta == 2.0


def test_zero_mean_gaussian_has_no_similarity_constant():
    with pytest.raises(DomainError, match="volatility floor"):
        GaussianZeroMean().similarity_delta()


@pytest.mark.parametrize(
    "family,delta",
    [(Poisson(), 1.0), (ZeroInflatedPoisson(0.3), 0.3), (CompoundPoisson(((2, 1.0),)), 1.0), (GaussianWithFloor(4.0), 0.25)],
)
def test_similarity_constants(family, delta):
    assert family.similarity_delta().delta == delta


def test_invalid_arguments_raise():
    fam = Poisson()
    with pytest.raises(DomainError):
        fam.quantile(-1.0, 0.5)
    with pytest.raises(DomainError):
        fam.quantile(1.0, 1.5)
    with pytest.raises(DomainError):
        fam.tv_overlap(float("nan"), 1.0)
    with pytest.raises(DomainError):
        ZeroInflatedPoisson(0.0)
    with pytest.raises(DomainError):
        GaussianWithFloor(-1.0)


@given(lam=lams, t=probs)
@settings(max_examples=200, deadline=None)
def test_discrete_quantile_is_generalized_inverse(lam, t):
    fam = Poisson()
    y = fam.quantile(lam, t)
    table = np.cumsum(fam.pmf_table([lam])[0])
    assert table[int(y)] >= t or int(y) == table.size - 1
    if y > 0:
        assert table[int(y) - 1] < t


def test_fast_quantile_agrees_with_table_inversion(discrete_family):
    rng = np.random.default_rng(3)
    lam = rng.exponential(5.0, 4000)
    t = rng.random(4000)
    table = discrete_family.pmf_table(lam)
    ref = seeds._ginv_rows(np.cumsum(table, axis=1), t, table)
    assert np.array_equal(discrete_family.quantile_batch(lam, t), ref.astype(float))


@given(lam=st.floats(0.01, 30.0), t=probs)
@settings(max_examples=100, deadline=None)
def test_gaussian_quantile_inverts_cdf(lam, t):
    fam = GaussianZeroMean()
    x = fam.quantile(lam, t)
    assert_close(fam.cdf(lam, x), t, tol=1e-9)


@given(lam=lams, lam2=lams)
@settings(max_examples=200, deadline=None)
def test_overlap_symmetric_and_above_similarity_bound(lam, lam2):
    fam = Poisson()
    a = fam.tv_overlap(lam, lam2)[0]
    b = fam.tv_overlap(lam2, lam)[0]
    assert_close(a, b, tol=1e-12)
    assert 0.0 <= a <= 1.0
    assert a >= math.exp(-abs(lam - lam2)) - 1e-12


@given(lam=st.floats(0.0, 20.0), lam2=st.floats(0.0, 20.0))
@settings(max_examples=100, deadline=None)
def test_gaussian_floor_overlap_above_similarity_bound(lam, lam2):
    fam = GaussianWithFloor(0.5)
    assert fam.tv_overlap(lam, lam2)[0] >= math.exp(-abs(lam - lam2) / 0.5) - 1e-12


@given(lam=lams, lam2=lams, u=st.lists(probs, min_size=1, max_size=30))
@settings(max_examples=100, deadline=None)
def test_coupled_draws_agree_exactly_on_hits(lam, lam2, u):
    fam = Poisson()
    u = np.array(u)
    d = fam.couple_batch(np.full(u.size, lam), np.full(u.size, lam2), u)
    assert np.array_equal(d.y[d.hit], d.y_prime[d.hit])
    overlap = fam.tv_overlap(lam, lam2)[0]
    assert np.array_equal(d.hit, u <= overlap) or lam == lam2


def _grid_marginals(fam, lam, lam2, n=200_000):
    u = (np.arange(n) + 0.5) / n
    d = fam.couple_batch(np.full(n, lam), np.full(n, lam2), u)
    return d


@pytest.mark.parametrize("lam,lam2", [(1.0, 1.7), (0.2, 6.0), (9.0, 3.0)])
def test_coupled_marginals_exact_on_uniform_grid(discrete_family, lam, lam2):
    n = 200_000
    d = _grid_marginals(discrete_family, lam, lam2, n)
    for draws, lam_ in ((d.y, lam), (d.y_prime, lam2)):
        pmf = discrete_family.pmf_table([lam_])[0]
        freq = np.bincount(draws.astype(int), minlength=pmf.size)[: pmf.size] / n
        assert np.max(np.abs(freq - pmf)) <= 2.0 / n


@pytest.mark.parametrize("v,V", [(1.0, 1.44), (0.5, 4.0)])
def test_coupled_gaussian_marginals_exact_on_uniform_grid(gaussian_family, v, V):
    n = 100_000
    d = _grid_marginals(gaussian_family, v, V, n)
    for draws, var in ((d.y, gaussian_family.variance(v)), (d.y_prime, gaussian_family.variance(V))):
        ks = stats.kstest(draws, "norm", args=(0.0, math.sqrt(var))).statistic
        assert ks <= 3.0 / n


def test_discrete_split_inverses(poisson):
    overlap, split = poisson.tv_overlap(1.0, 1.7)
    assert split.F[-1] == pytest.approx(overlap)
    assert split.F_inverse(overlap / 2) == int(np.argmax(split.F >= overlap / 2))
    assert split.excess_a[split.G_inverse(0.5 * (1 - overlap))] > 0
    assert split.excess_b[split.G_prime_inverse(0.5 * (1 - overlap))] > 0


def test_functional_front_end(poisson):
    assert seeds.density(poisson, 1.0, 0) == pytest.approx(math.exp(-1))
    assert seeds.quantile(poisson, 1.0, 0.5) == 1.0
    assert seeds.sample(poisson, 1.0, 0.5) == seeds.quantile(poisson, 1.0, 0.5)
    assert seeds.similarity_delta(poisson).delta == 1.0
    assert seeds.tv_overlap(poisson, 1.0, 2.0)[0] == pytest.approx(0.6702469673669534, abs=1e-12)
