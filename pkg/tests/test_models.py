import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hmev import _pykernels, kernels, models, synth
from hmev.models import Dataset, GevModel, HmevModel, ModelError, PotModel

from .oracles import logpost


def _finite_points(model, rng, n, jitter):
    out = []
    while len(out) < n:
        v = model.initial_point(rng, jitter)
        if np.isfinite(model.log_density(v)[0]):
            out.append(v)
    return out


# the oracles return long doubles; rounding to float64 first would swamp
# finite differences when |lp| is large

def _hmev_oracle(model, v):
    pr = model.priors
    return logpost.hmev(v, [b.magnitudes for b in model.data.blocks], model.N,
                        [(p.shape, p.scale) for p in pr.hyper_priors()], (pr.lam_a, pr.lam_b))


def _gev_oracle(model, v):
    p = model.priors
    return logpost.gev(v, model.maxima, p.loc_mean, p.loc_sd, p.scale_sd, p.shape_mean, p.shape_sd)


def _pot_oracle(model, v):
    p = model.priors
    return logpost.pot(v, model.counts, model.excesses, p.rate_shape, p.rate_scale, p.scale_sd,
                       p.shape_mean, p.shape_sd)


@pytest.fixture(scope="module")
def toy():
    return Dataset.from_lists([[1.2, 7.5, 3.3], [], [12.0, 0.8]], block_size=10)


@pytest.fixture(scope="module")
def wei_g_data():
    return synth.generate_scenario(synth.ScenarioSpec(family="WEI_G", m_train=20), 0)[0]


class TestHmevLogPosterior:
    def test_empty_single_block(self):
        data = Dataset.from_lists([[]], block_size=366)
        pri = models.PriorConfig()
        m = HmevModel(data, pri)
        theta = np.array([9.0, 2.0, 0.7, 0.05, 0.3, 0.65, 8.0])
        v = m.unconstrain(theta)
        expected = (sum(stats.invgamma(p.shape, scale=p.scale).logpdf(h)
                        for p, h in zip(pri.hyper_priors(), theta[:4]))
                    + stats.beta(2, 2).logpdf(0.3)
                    + stats.binom(366, 0.3).logpmf(0)
                    + stats.gumbel_r(0.7, 0.05).logpdf(0.65) - stats.gumbel_r(0.7, 0.05).logsf(0.0)
                    + stats.gumbel_r(9.0, 2.0).logpdf(8.0) - stats.gumbel_r(9.0, 2.0).logsf(0.0)
                    + m.log_jacobian(v))
        assert m.log_density(v)[0] == pytest.approx(expected, abs=1e-10)

    def test_factor_oracle_on_parameter_grid(self):
        # J=2 with at most 3 events: total mass over a grid, composed from scipy factors
        data = Dataset.from_lists([[2.0, 5.5, 0.9], [3.1]], block_size=8)
        pri = models.PriorConfig()
        m = HmevModel(data, pri)
        total_model = total_oracle = 0.0
        for lam in (0.2, 0.5):
            for g1 in (0.5, 0.9):
                for d2 in (2.0, 6.0):
                    theta = np.array([8.0, 1.5, 0.7, 0.1, lam, g1, 0.8, 4.0, d2])
                    v = m.unconstrain(theta)
                    gam, dlt = theta[5:7], theta[7:9]
                    f = (sum(stats.invgamma(p.shape, scale=p.scale).logpdf(h)
                             for p, h in zip(pri.hyper_priors(), theta[:4]))
                         + stats.beta(pri.lam_a, pri.lam_b).logpdf(lam))
                    for j, b in enumerate(data.blocks):
                        f += stats.binom(8, lam).logpmf(b.n)
                        f += stats.gumbel_r(0.7, 0.1).logpdf(gam[j]) - stats.gumbel_r(0.7, 0.1).logsf(0)
                        f += stats.gumbel_r(8.0, 1.5).logpdf(dlt[j]) - stats.gumbel_r(8.0, 1.5).logsf(0)
                        f += stats.weibull_min(gam[j], scale=dlt[j]).logpdf(b.magnitudes).sum()
                    f += m.log_jacobian(v)
                    total_model += math.exp(m.log_density(v)[0])
                    total_oracle += math.exp(f)
        assert total_model == pytest.approx(total_oracle, rel=1e-10)

    def test_matches_extended_precision_oracle(self, wei_g_data):
        m = HmevModel(wei_g_data)
        rng = np.random.default_rng(3)
        for _ in range(5):
            v = m.initial_point(rng, 0.2)
            assert m.log_density(v)[0] == pytest.approx(_hmev_oracle(m, v), rel=1e-12)

    def test_gradient_toy(self, toy):
        m = HmevModel(toy)
        rng = np.random.default_rng(11)
        for _ in range(10):
            v = m.initial_point(rng, 0.1)
            g = m.log_density(v)[1]
            fd = logpost.gradient(lambda u: _hmev_oracle(m, u), v)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6)

    def test_compiled_and_python_kernels_agree(self, wei_g_data):
        m = HmevModel(wei_g_data)
        v = m.initial_point(np.random.default_rng(0), 0.3)
        lp_c, g_c = kernels.hmev_log_density(v, m)
        lp_p, g_p = kernels.hmev_log_density(v, m, impl=_pykernels)
        assert lp_c == pytest.approx(lp_p, rel=1e-12)
        np.testing.assert_allclose(g_c, g_p, rtol=1e-10, atol=1e-10)

    def test_nonfinite_state_gives_minus_inf(self, toy):
        m = HmevModel(toy)
        v = m.initial_point()
        v[5] = 800.0
        lp, g = m.log_density(v)
        assert lp == -np.inf and np.all(g == 0)

    def test_wrong_length(self, toy):
        with pytest.raises(ModelError):
            HmevModel(toy).log_density(np.zeros(3))

    def test_constrain_round_trip(self, toy):
        m = HmevModel(toy)
        v = np.random.default_rng(0).normal(size=m.dim)
        np.testing.assert_allclose(m.unconstrain(m.constrain(v)), v, atol=1e-12)


class TestGev:
    def test_shape_limit_matches_gumbel_likelihood(self):
        y = np.array([31.0, 45.0, 52.0, 38.0, 70.0])
        m = GevModel(y)
        p = m.priors
        for xi in (1e-7, -1e-7, 0.0):
            v = np.array([40.0, math.log(10.0), xi])
            prior = (stats.norm(p.loc_mean, p.loc_sd).logpdf(40.0) + stats.halfnorm(scale=p.scale_sd).logpdf(10.0)
                     + stats.norm(p.shape_mean, p.shape_sd).logpdf(xi) + math.log(10.0))
            loglik = m.log_density(v)[0] - prior
            assert loglik == pytest.approx(stats.gumbel_r(40.0, 10.0).logpdf(y).sum(), abs=1e-6)

    def test_single_maximum_at_location(self):
        m = GevModel(np.array([40.0, 40.0]))
        p = m.priors
        v = np.array([40.0, math.log(10.0), 0.0])
        prior = (stats.norm(p.loc_mean, p.loc_sd).logpdf(40.0) + stats.halfnorm(scale=p.scale_sd).logpdf(10.0)
                 + stats.norm(p.shape_mean, p.shape_sd).logpdf(0.0) + math.log(10.0))
        assert (m.log_density(v)[0] - prior) / 2 == pytest.approx(-math.log(10.0) - 1, abs=1e-12)

    def test_against_scipy(self):
        y = np.array([31.0, 45.0, 52.0, 38.0, 70.0, 101.0])
        m = GevModel(y)
        v = np.array([42.0, math.log(11.0), 0.2])
        p = m.priors
        ref = (stats.genextreme(-0.2, 42.0, 11.0).logpdf(y).sum() + stats.norm(p.loc_mean, p.loc_sd).logpdf(42.0)
               + stats.halfnorm(scale=p.scale_sd).logpdf(11.0) + stats.norm(p.shape_mean, p.shape_sd).logpdf(0.2)
               + math.log(11.0))
        assert m.log_density(v)[0] == pytest.approx(ref, rel=1e-12)

    def test_outside_support(self):
        m = GevModel(np.array([10.0, 100.0]))
        lp, g = m.log_density(np.array([50.0, 0.0, -1.0]))
        assert lp == -np.inf

    def test_gradient(self, wei_g_data):
        m = GevModel(wei_g_data.maxima)
        for v in _finite_points(m, np.random.default_rng(5), 20, 0.5):
            g = m.log_density(v)[1]
            np.testing.assert_allclose(g, logpost.gradient(lambda u: _gev_oracle(m, u), v), rtol=1e-6, atol=1e-6)


class TestPot:
    def test_zero_exceedances(self):
        data = Dataset.from_lists([[1.0, 2.0], [3.0], []], block_size=10)
        m = PotModel(data, threshold=50.0)
        p = m.priors
        rate, sig, xi = 0.7, 4.0, 0.1
        v = np.array([math.log(rate), math.log(sig), xi])
        prior = (stats.gamma(p.rate_shape, scale=p.rate_scale).logpdf(rate) + stats.halfnorm(scale=p.scale_sd).logpdf(sig)
                 + stats.norm(p.shape_mean, p.shape_sd).logpdf(xi) + math.log(rate) + math.log(sig))
        assert m.log_density(v)[0] - prior == pytest.approx(3 * stats.poisson(rate).logpmf(0), abs=1e-12)

    def test_exponential_excess_of_one_scale(self):
        data = Dataset.from_lists([[1.0, 15.0]], block_size=10)
        m = PotModel(data, threshold=10.0)  # one excess of 5
        p = m.priors
        v = np.array([0.0, math.log(5.0), 0.0])
        prior = (stats.gamma(p.rate_shape, scale=p.rate_scale).logpdf(1.0) + stats.halfnorm(scale=p.scale_sd).logpdf(5.0)
                 + stats.norm(p.shape_mean, p.shape_sd).logpdf(0.0) + math.log(5.0))
        excess_term = m.log_density(v)[0] - prior - stats.poisson(1.0).logpmf(1)
        assert excess_term == pytest.approx(-math.log(5.0) - 1, abs=1e-12)

    def test_gradient(self, wei_g_data):
        m = models.build_model("pot", wei_g_data)
        for v in _finite_points(m, np.random.default_rng(6), 20, 0.5):
            g = m.log_density(v)[1]
            np.testing.assert_allclose(g, logpost.gradient(lambda u: _pot_oracle(m, u), v), rtol=1e-6, atol=1e-6)

    def test_against_extended_precision_oracle(self, wei_g_data):
        m = models.build_model("pot", wei_g_data)
        v = m.initial_point(np.random.default_rng(1), 0.3)
        assert m.log_density(v)[0] == pytest.approx(_pot_oracle(m, v), rel=1e-12)


class TestThreshold:
    def test_type7_quantile(self):
        data = Dataset.from_lists([list(range(1, 101))], block_size=366)
        assert models.threshold_select(data, 0.95) == pytest.approx(95.05, abs=1e-12)

    def test_zero_quantile_is_minimum(self):
        data = Dataset.from_lists([list(np.arange(3.0, 60.0))], block_size=366)
        assert models.threshold_select(data, 0.0) == 3.0

    @pytest.mark.parametrize("q", [0.0, 0.5, 0.95])
    def test_constant_magnitudes(self, q):
        data = Dataset.from_lists([[4.2] * 40], block_size=366)
        assert models.threshold_select(data, q) == pytest.approx(4.2)

    def test_too_few_events(self):
        with pytest.raises(ModelError, match="need at least 30"):
            models.threshold_select(Dataset.from_lists([[1.0, 2.0]]), 0.95)


class TestGenerator:
    def test_zero_rate_gives_empty_blocks(self):
        d = models.hmev_generate((9, 2, 0.7, 0.05), 0.0, 366, 20, np.random.default_rng(0))
        assert d.counts.sum() == 0

    def test_mean_count(self):
        d = models.hmev_generate((9, 2, 0.7, 0.05), 0.3, 366, 10_000, np.random.default_rng(1))
        se = math.sqrt(366 * 0.3 * 0.7 / 10_000)
        assert abs(d.counts.mean() - 109.8) < 4 * se

    def test_degenerate_latents(self):
        d = models.hmev_generate((10.0, 0.0, 2 / 3, 0.0), 0.6, 366, 30, np.random.default_rng(2))
        fits = np.array([models.weibull_moments_fit(b.magnitudes) for b in d.blocks])
        assert np.median(fits[:, 0]) == pytest.approx(2 / 3, rel=0.1)
        assert np.median(fits[:, 1]) == pytest.approx(10.0, rel=0.1)


class TestPriorsAndInit:
    def test_default_priors_centres(self):
        data = Dataset.from_lists([[5.0, 15.0], [10.0]])
        hp = models.default_priors(data).hyper_priors()
        assert hp[0].mean() == pytest.approx(10.0)
        assert hp[1].mean() == pytest.approx(2.5)
        assert hp[2].mean() == pytest.approx(2 / 3)
        assert hp[3].mean() == pytest.approx(0.05 * 2 / 3)

    def test_inverse_gamma_scale_identity(self):
        ig = models.dist.InvGamma.from_mean(7.0, 5.0)
        assert ig.scale == pytest.approx(28.0)

    def test_initial_rate_near_truth(self):
        d = models.hmev_generate((9, 2, 0.7, 0.05), 0.3, 366, 50, np.random.default_rng(4))
        v = HmevModel(d).initial_point()
        assert HmevModel(d).constrain(v)[4] == pytest.approx(0.3, abs=0.02)

    def test_empty_block_starts_at_hyperprior_means(self):
        d = Dataset.from_lists([[3.0, 8.0, 1.0, 4.0], []])
        m = HmevModel(d)
        theta = m.constrain(m.initial_point())
        hyp = [p.mean() for p in m.priors.hyper_priors()]
        assert theta[5 + 1] == pytest.approx(hyp[2])
        assert theta[5 + 2 + 1] == pytest.approx(hyp[0])

    def test_weibull_moment_fit_recovers_parameters(self):
        x = models.dist.Weibull(2 / 3, 10.0).sample(np.random.default_rng(8), 200)
        g, d = models.weibull_moments_fit(x)
        assert g == pytest.approx(2 / 3, rel=0.15)
        assert d == pytest.approx(10.0, rel=0.15)

    def test_prior_config_file_round_trip(self, tmp_path):
        pri = models.PriorConfig(mu_delta_scale=33.0)
        path = tmp_path / "priors.ini"
        models.save_config(path, hmev_priors=pri)
        assert models.load_prior_config(path) == pri

    def test_bad_prior(self):
        with pytest.raises(ModelError):
            models.PriorConfig(lam_a=0.0)


class TestDataset:
    def test_rejects_nonpositive_magnitudes(self):
        with pytest.raises(ModelError):
            Dataset.from_lists([[1.0, -2.0]])

    def test_rejects_overfull_block(self):
        with pytest.raises(ModelError):
            Dataset.from_lists([[1.0] * 5], block_size=4)

    def test_maxima_skip_empty_blocks(self, toy):
        np.testing.assert_array_equal(toy.maxima, [7.5, 12.0])

    def test_censoring(self):
        d = Dataset.from_lists([[0.1, 0.3, 0.31, 5.0]]).censored(0.3)
        np.testing.assert_array_equal(d.blocks[0].magnitudes, [0.31, 5.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(1e-3, 1e4, allow_nan=False), max_size=6), min_size=1, max_size=8))
def test_dataset_csv_round_trip(blocks):
    d = Dataset.from_lists(blocks, block_size=366)
    back = Dataset.from_csv(d.to_csv())
    assert back.J == d.J
    for a, b in zip(d.blocks, back.blocks):
        np.testing.assert_array_equal(a.magnitudes, b.magnitudes)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_hmev_gradient_property(seed):
    rng = np.random.default_rng(seed)
    data = models.hmev_generate((6.0, 1.0, 0.8, 0.05), 0.05, 60, 3, rng)
    m = HmevModel(data)
    v = m.initial_point(rng, 0.1)
    g = m.log_density(v)[1]
    fd = logpost.gradient(lambda u: _hmev_oracle(m, u), v)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6)
