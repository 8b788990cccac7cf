import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from hmev import dist

from .helpers import central_difference
from .reference_values import GPD_Q99, WEIBULL_CDF_30, WEIBULL_LOGPDF_30

CONTINUOUS = [
    dist.Weibull(0.7, 9.0),
    dist.Weibull(2.5, 3.0),
    dist.Gumbel(3.0, 2.0),
    dist.TruncatedGumbel(0.7, 0.035),
    dist.TruncatedGumbel(0.5, 1.0),
    dist.GEV(40.0, 12.0, 0.15),
    dist.GEV(40.0, 12.0, -0.2),
    dist.GEV(40.0, 12.0, 0.0),
    dist.GPD(10.0, 5.0, 0.1),
    dist.GPD(0.0, 2.0, -0.3),
    dist.Normal(1.0, 2.0),
    dist.HalfNormal(3.0),
    dist.Gamma(0.8, 11.0),
    dist.InvGamma(5.0, 40.0),
    dist.Beta(2.0, 2.0),
]


class TestPointValues:
    def test_weibull_exponential_at_origin(self):
        assert dist.Weibull(1.0, 2.0).logpdf(0.0) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_gumbel_density_at_location(self):
        assert dist.Gumbel(3.0, 2.0).logpdf(3.0) == pytest.approx(math.log(0.5 * math.exp(-1)), abs=1e-14)

    def test_weibull_logpdf_against_high_precision(self):
        assert dist.Weibull(2 / 3, 10.0).logpdf(30.0) == pytest.approx(WEIBULL_LOGPDF_30, rel=1e-13)

    @pytest.mark.parametrize("shape", [0.3, 0.7, 1.0, 4.0])
    def test_weibull_cdf_at_scale(self, shape):
        assert dist.Weibull(shape, 7.5).cdf(7.5) == pytest.approx(1 - math.exp(-1), abs=1e-15)

    def test_weibull_cdf_against_high_precision(self):
        assert dist.Weibull(2 / 3, 10.0).cdf(30.0) == pytest.approx(WEIBULL_CDF_30, rel=1e-14)

    def test_gev_gumbel_limit_at_location(self):
        assert dist.GEV(5.0, 2.0, 0.0).cdf(5.0) == pytest.approx(math.exp(-1), abs=1e-15)
        assert dist.GEV(5.0, 2.0, 1e-10).cdf(5.0) == pytest.approx(math.exp(-1), abs=1e-12)

    def test_weibull_quantile_exponential(self):
        assert dist.Weibull(1.0, 1.0).quantile(1 - math.exp(-1)) == pytest.approx(1.0, rel=1e-14)

    def test_gpd_quantile_against_bisection(self):
        g = dist.GPD(10.0, 5.0, 0.1)
        assert g.quantile(0.99) == pytest.approx(GPD_Q99, rel=1e-13)
        assert dist.bisect_quantile(g, 0.99, 10.0, 500.0) == pytest.approx(GPD_Q99, rel=1e-11)

    def test_weibull_score_exponential(self):
        assert dist.Weibull(1.0, 2.0).grad_logpdf(1.0)[2] == pytest.approx(-0.5, abs=1e-15)

    def test_gumbel_location_score_vanishes_at_location(self):
        assert dist.Gumbel(3.0, 2.0).grad_logpdf(3.0)[0] == pytest.approx(0.0, abs=1e-15)


class TestAgainstScipy:
    x = np.array([0.5, 3.0, 12.0, 45.0, 80.0])

    def test_gev_sign_convention(self):
        # positive shape is the heavy (Frechet) tail; scipy's c is its negative
        g = dist.GEV(40.0, 12.0, 0.15)
        ref = stats.genextreme(-0.15, loc=40.0, scale=12.0)
        np.testing.assert_allclose(g.logpdf(self.x), ref.logpdf(self.x), rtol=1e-12)
        np.testing.assert_allclose(g.cdf(self.x), ref.cdf(self.x), rtol=1e-12, atol=1e-300)

    def test_gpd(self):
        g = dist.GPD(10.0, 5.0, 0.1)
        x = self.x[self.x > 10]
        np.testing.assert_allclose(g.logpdf(x), stats.genpareto(0.1, 10.0, 5.0).logpdf(x), rtol=1e-12)

    def test_gamma_and_invgamma(self):
        np.testing.assert_allclose(dist.Gamma(0.8, 11.0).logpdf(self.x),
                                   stats.gamma(0.8, scale=11.0).logpdf(self.x), rtol=1e-12)
        np.testing.assert_allclose(dist.InvGamma(5.0, 40.0).logpdf(self.x),
                                   stats.invgamma(5.0, scale=40.0).logpdf(self.x), rtol=1e-12)

    def test_truncated_gumbel_normaliser(self):
        tg = dist.TruncatedGumbel(0.0, 1.0)
        untrunc = stats.gumbel_r(0.0, 1.0).logpdf(1.0)
        assert tg.logpdf(1.0) == pytest.approx(untrunc - math.log(1 - math.exp(-1)), abs=1e-14)

    def test_truncation_negligible_far_from_zero(self):
        tg = dist.TruncatedGumbel(10.0, 1.0)
        x = np.array([8.0, 10.0, 13.0])
        np.testing.assert_allclose(tg.logpdf(x), dist.Gumbel(10.0, 1.0).logpdf(x), atol=1e-8)

    def test_out_of_support(self):
        assert dist.Weibull(0.7, 9.0).logpdf(-1.0) == -np.inf
        assert dist.TruncatedGumbel(1.0, 1.0).logpdf(-0.1) == -np.inf
        assert dist.GPD(10.0, 5.0, 0.1).logpdf(9.0) == -np.inf
        assert dist.GEV(0.0, 1.0, 0.5).logpdf(-3.0) == -np.inf


@pytest.mark.parametrize("d", CONTINUOUS, ids=repr)
def test_round_trip(d):
    p = np.array([1e-6, 0.01, 0.2, 0.5, 0.8, 0.99, 0.999999])
    x = np.asarray(d.quantile(p))
    np.testing.assert_allclose(d.cdf(x), p, rtol=1e-8, atol=1e-14)


@pytest.mark.parametrize("d", CONTINUOUS, ids=repr)
def test_density_integrates_to_one(d):
    lo, hi = d.quantile(1e-12), d.quantile(1 - 1e-12)
    brk = np.asarray(d.quantile([0.01, 0.5, 0.99]))
    val, _ = integrate.quad(lambda x: math.exp(d.logpdf(x)), lo, hi, points=brk, limit=400,
                            epsabs=1e-12, epsrel=1e-11)
    assert val == pytest.approx(1.0, abs=1e-5)


def test_truncated_gumbel_integrates_over_positive_axis():
    tg = dist.TruncatedGumbel(0.7, 0.3)
    val, _ = integrate.quad(lambda x: math.exp(tg.logpdf(x)), 0, np.inf, epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("d", CONTINUOUS, ids=repr)
def test_gradient_matches_central_differences(d):
    rng = np.random.default_rng(7)
    xs = np.asarray(d.quantile(rng.uniform(0.05, 0.95, 5)))
    names = [f for f in d.__dataclass_fields__]
    for x in xs:
        g = d.grad_logpdf(x)
        for i, name in enumerate(names):
            base = getattr(d, name)

            def f(v, name=name):
                return float(type(d)(**{**{k: getattr(d, k) for k in names}, name: v}).logpdf(x))

            assert g[i] == pytest.approx(central_difference(f, base), rel=1e-6, abs=1e-8)
        assert g[-1] == pytest.approx(central_difference(lambda v: float(d.logpdf(v)), x), rel=1e-6, abs=1e-8)


class TestGevShapeLimit:
    @pytest.mark.parametrize("xi", [1e-8, -1e-8, 1e-9, 1e-12])
    def test_near_zero_matches_gumbel(self, xi):
        x = np.linspace(10, 120, 12)
        np.testing.assert_allclose(dist.GEV(40.0, 12.0, xi).logpdf(x), dist.Gumbel(40.0, 12.0).logpdf(x),
                                   atol=1e-6)
        np.testing.assert_allclose(dist.GEV(40.0, 12.0, xi).cdf(x), dist.Gumbel(40.0, 12.0).cdf(x), atol=1e-6)

    @pytest.mark.parametrize("xi", [1.01e-5, 0.99e-5, 3e-6, -3e-6, 1e-7, -2e-8])
    def test_series_branch_against_high_precision(self, xi):
        mp.mp.dps = 40
        for x in (10.0, 40.0, 95.0):
            z = (mp.mpf(x) - 40) / 12
            q = mp.log1p(mp.mpf(xi) * z) / mp.mpf(xi)
            ref = -mp.log(12) - (mp.mpf(xi) + 1) * q - mp.exp(-q)
            assert dist.GEV(40.0, 12.0, xi).logpdf(x) == pytest.approx(float(ref), abs=1e-9)

    def test_limit_error_shrinks(self):
        x = np.linspace(10, 120, 12)
        gum = dist.Gumbel(40.0, 12.0).logpdf(x)
        err = [np.max(np.abs(dist.GEV(40.0, 12.0, xi).logpdf(x) - gum)) for xi in (1e-3, 1e-5, 1e-7)]
        assert err[0] > err[1] > err[2]


class TestDiscrete:
    def test_binomial_mean(self):
        rng = np.random.default_rng(1)
        s = dist.Binomial(0.3, 366).sample(rng, 100_000)
        assert abs(s.mean() - 109.8) < 0.5

    def test_fixed(self):
        assert np.all(dist.Fixed(5).sample(np.random.default_rng(0), 50) == 5)
        assert dist.Fixed(5).logpdf(5) == 0.0

    def test_betabinomial_pmf_matches_scipy(self):
        n = np.arange(0, 367, 7)
        np.testing.assert_allclose(dist.BetaBinomial(93.46, 248.61, 366).logpdf(n),
                                   stats.betabinom(366, 93.46, 248.61).logpmf(n), rtol=1e-10)

    def test_binomial_pmf_sums_to_one(self):
        assert np.exp(dist.Binomial(0.27, 366).logpdf(np.arange(367))).sum() == pytest.approx(1.0, abs=1e-12)


class TestErrors:
    @pytest.mark.parametrize("make", [lambda: dist.Weibull(0.0, 1.0), lambda: dist.Gumbel(0.0, -1.0),
                                      lambda: dist.GEV(0.0, 1.0, np.nan), lambda: dist.Binomial(1.5, 10)])
    def test_bad_parameters(self, make):
        with pytest.raises(dist.ParameterError):
            make()

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, np.nan])
    def test_bad_probability(self, p):
        with pytest.raises(dist.DomainError):
            dist.Weibull(0.7, 9.0).quantile(p)


@settings(max_examples=200, deadline=None)
@given(shape=st.floats(0.2, 5.0), scale=st.floats(0.1, 100.0), p=st.floats(1e-9, 1 - 1e-9))
def test_weibull_round_trip_property(shape, scale, p):
    w = dist.Weibull(shape, scale)
    assert w.cdf(w.quantile(p)) == pytest.approx(p, rel=1e-8, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(loc=st.floats(-50, 50), scale=st.floats(0.1, 30), xi=st.floats(-0.45, 0.45),
       p=st.floats(1e-6, 1 - 1e-6))
def test_gev_round_trip_property(loc, scale, xi, p):
    g = dist.GEV(loc, scale, xi)
    assert g.cdf(g.quantile(p)) == pytest.approx(p, rel=1e-8, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(loc=st.floats(-3, 10), scale=st.floats(0.02, 5), p=st.floats(1e-9, 1 - 1e-9))
def test_truncated_gumbel_quantile_positive(loc, scale, p):
    tg = dist.TruncatedGumbel(loc, scale)
    x = tg.quantile(p)
    assert x > 0
    assert tg.cdf(x) == pytest.approx(p, rel=1e-7, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(shape=st.floats(0.3, 3), scale=st.floats(0.5, 50), x=st.floats(0.01, 200), y=st.floats(0.01, 200))
def test_cdf_monotone(shape, scale, x, y):
    w = dist.Weibull(shape, scale)
    lo, hi = min(x, y), max(x, y)
    assert w.cdf(lo) <= w.cdf(hi)
