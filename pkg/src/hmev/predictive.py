"""Posterior-predictive block-maximum distributions and return levels.

Every fitted model is turned into a set of per-draw block-maximum laws
(one per retained posterior draw). For the hierarchical model a draw is
represented by ``M_g`` simulated future blocks, each with its own Weibull
parameters and event count, and the block-maximum cdf of the draw is the
average of ``F(y)**n`` over those blocks. The GEV and POT baselines have
closed forms.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, stats

from . import dist, kernels
from .dist import XI_EPS, _xi_series

DEFAULT_FUTURE_BLOCKS = 50
DEFAULT_RETURN_TIMES = np.geomspace(1.05, 500.0, 60)


class PredictiveError(ValueError):
    """Invalid posterior draws or query."""


def _prob_from_return_time(return_time):
    T = np.asarray(return_time, dtype=float)
    if np.any(~(T > 1)):
        raise PredictiveError("return times must exceed 1 block")
    return 1.0 - 1.0 / T


# --------------------------------------------------------------------------
# per-draw block-maximum laws


class BlockMaxLaw:
    """Common interface: ``cdf``/``pdf`` return (B, P) arrays, ``quantiles``
    returns (B, P) per-draw levels."""

    model = ""

    @property
    def B(self):
        raise NotImplementedError

    def cdf(self, y):
        raise NotImplementedError

    def pdf(self, y):
        raise NotImplementedError

    def quantiles(self, prob):
        raise NotImplementedError

    def subset(self, index):
        raise NotImplementedError


@dataclass
class HmevLaw(BlockMaxLaw):
    """``M_g`` future blocks per draw: Weibull shape/scale and event count."""

    shape: np.ndarray  # (B, M_g)
    scale: np.ndarray  # (B, M_g)
    n: np.ndarray  # (B, M_g) int
    tol: float = 1e-6
    model = "hmev"

    def __post_init__(self):
        self.shape = np.ascontiguousarray(np.atleast_2d(self.shape), dtype=float)
        self.scale = np.ascontiguousarray(np.atleast_2d(self.scale), dtype=float)
        self.n = np.ascontiguousarray(np.atleast_2d(self.n), dtype=np.int_)
        if not (self.shape.shape == self.scale.shape == self.n.shape):
            raise PredictiveError("shape, scale and counts must have the same (draws, blocks) shape")
        if self.shape.shape[1] < 1:
            raise PredictiveError("need at least one future block per draw")
        if np.any(~(self.shape > 0)) or np.any(~(self.scale > 0)) or np.any(self.n < 0):
            raise PredictiveError("Weibull parameters must be positive and counts nonnegative")

    @property
    def B(self):
        return self.shape.shape[0]

    @property
    def future_blocks(self):
        return self.shape.shape[1]

    @classmethod
    def from_posterior(cls, hypers, rate, block_size, rng, future_blocks=DEFAULT_FUTURE_BLOCKS,
                       tol=None):
        """Draw future blocks given per-draw hyperparameters.

        ``hypers`` is (B, 4) with columns (mu_delta, sigma_delta, mu_gamma,
        sigma_gamma); ``rate`` is (B,). Blocks within a draw are i.i.d. given
        that draw's hyperparameters.
        """
        hypers = np.atleast_2d(np.asarray(hypers, dtype=float))
        rate = np.atleast_1d(np.asarray(rate, dtype=float))
        if hypers.shape[1] != 4 or len(rate) != hypers.shape[0]:
            raise PredictiveError("need (B, 4) hyperparameters and B occurrence rates")
        if future_blocks < 1:
            raise PredictiveError("need at least one future block per draw")
        M = int(future_blocks)
        n = rng.binomial(int(block_size), np.repeat(rate[:, None], M, axis=1))
        scale = _truncated_gumbel_draws(rng, hypers[:, 0], hypers[:, 1], M)
        shape = _truncated_gumbel_draws(rng, hypers[:, 2], hypers[:, 3], M)
        if tol is None:
            tol = 1e-6 * float(np.median(hypers[:, 0]))
        return cls(shape, scale, n, tol)

    def cdf(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return kernels.compound_cdf(np.maximum(y, 0.0), self.shape, self.scale, self.n)

    def pdf(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return kernels.compound_pdf(np.maximum(y, 0.0), self.shape, self.scale, self.n)

    def quantiles(self, prob):
        prob = np.atleast_1d(np.asarray(prob, dtype=float))
        return kernels.compound_quantile(prob, self.shape, self.scale, self.n, self.tol)

    def subset(self, index):
        return HmevLaw(self.shape[index], self.scale[index], self.n[index], self.tol)


def _truncated_gumbel_draws(rng, loc, scale, size):
    # (B,) parameters -> (B, size) draws; zero scale means a fixed value
    u = rng.random((len(loc), size)) * (1 - 2e-16) + 1e-16
    loc = loc[:, None]
    scale = scale[:, None]
    safe = np.where(scale > 0, scale, 1.0)
    draws = np.asarray(dist.TruncatedGumbel(loc, safe).quantile(u))
    return np.where(scale > 0, draws, np.broadcast_to(loc, draws.shape))


@dataclass
class GevLaw(BlockMaxLaw):
    loc: np.ndarray
    scale: np.ndarray
    shape: np.ndarray
    model = "gev"

    def __post_init__(self):
        self.loc, self.scale, self.shape = (np.atleast_1d(np.asarray(a, dtype=float))
                                            for a in (self.loc, self.scale, self.shape))
        if np.any(~(self.scale > 0)):
            raise PredictiveError("GEV scale draws must be positive")

    @property
    def B(self):
        return len(self.loc)

    def _terms(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))[None, :]
        z = (y - self.loc[:, None]) / self.scale[:, None]
        xi = np.broadcast_to(self.shape[:, None], z.shape)
        ok = 1.0 + xi * z > 0
        q, _ = _xi_series(xi, np.where(ok, z, 0.0))
        return xi, ok, q

    def cdf(self, y):
        xi, ok, q = self._terms(y)
        return np.where(ok, np.exp(-np.exp(-q)), np.where(xi > 0, 0.0, 1.0))

    def pdf(self, y):
        xi, ok, q = self._terms(y)
        with np.errstate(over="ignore"):
            lp = -np.log(self.scale)[:, None] - xi * q - q - np.exp(-q)
        return np.where(ok, np.exp(lp), 0.0)

    def quantiles(self, prob):
        prob = np.atleast_1d(np.asarray(prob, dtype=float))[None, :]
        lg = np.log(-np.log(prob))
        xi = self.shape[:, None]
        small = np.abs(xi) < XI_EPS
        z = np.where(small, -lg, np.expm1(-xi * lg) / np.where(small, 1.0, xi))
        return self.loc[:, None] + self.scale[:, None] * z

    def subset(self, index):
        return GevLaw(self.loc[index], self.scale[index], self.shape[index])


@dataclass
class PotLaw(BlockMaxLaw):
    """Poisson(rate) exceedances of ``threshold`` with GPD(scale, shape) excesses.

    Below the threshold the model says only that no exceedance occurred, so
    the cdf is flat at exp(-rate) there. For density evaluation that mass is
    spread uniformly over (0, threshold).
    """

    rate: np.ndarray
    scale: np.ndarray
    shape: np.ndarray
    threshold: float
    model = "pot"

    def __post_init__(self):
        self.rate, self.scale, self.shape = (np.atleast_1d(np.asarray(a, dtype=float))
                                             for a in (self.rate, self.scale, self.shape))
        self.threshold = float(self.threshold)
        if np.any(~(self.rate > 0)) or np.any(~(self.scale > 0)):
            raise PredictiveError("POT rate and scale draws must be positive")
        if not self.threshold > 0:
            raise PredictiveError("POT threshold must be positive")

    @property
    def B(self):
        return len(self.rate)

    def _log_sf(self, y):
        # log GPD survival of the excess; -inf beyond a finite upper end point
        y = np.atleast_1d(np.asarray(y, dtype=float))[None, :]
        z = np.maximum(y - self.threshold, 0.0) / self.scale[:, None]
        xi = np.broadcast_to(self.shape[:, None], z.shape)
        ok = 1.0 + xi * z > 0
        q, _ = _xi_series(xi, np.where(ok, z, 0.0))
        return y, xi, ok, q

    def cdf(self, y):
        y, xi, ok, q = self._log_sf(y)
        lam = self.rate[:, None]
        inside = np.exp(-lam * np.exp(-q))
        above = np.where(ok, inside, 1.0)
        return np.where(y >= self.threshold, above, np.exp(-lam) * np.ones_like(q))

    def pdf(self, y):
        y, xi, ok, q = self._log_sf(y)
        lam = self.rate[:, None]
        with np.errstate(over="ignore", divide="ignore"):
            log_gpd = -np.log(self.scale)[:, None] - xi * q - q
            above = np.where(ok, np.exp(np.log(lam) + log_gpd - lam * np.exp(-q)), 0.0)
        below = np.where(y > 0, np.exp(-lam) / self.threshold, 0.0) * np.ones_like(q)
        return np.where(y >= self.threshold, above, below)

    def quantiles(self, prob):
        """Per-draw levels; probabilities at or below exp(-rate) map to the threshold."""
        prob = np.atleast_1d(np.asarray(prob, dtype=float))[None, :]
        lam = self.rate[:, None]
        s = -np.log(prob) / lam  # required GPD survival of the excess
        xi = self.shape[:, None]
        small = np.abs(xi) < XI_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            ls = np.log(np.minimum(s, 1.0))
            z = np.where(small, -ls, np.expm1(-xi * ls) / np.where(small, 1.0, xi))
        return self.threshold + self.scale[:, None] * z

    def subset(self, index):
        return PotLaw(self.rate[index], self.scale[index], self.shape[index], self.threshold)


def law_from_draws(model_name, draws_matrix, names, rng=None, block_size=366,
                   future_blocks=DEFAULT_FUTURE_BLOCKS, threshold=None, tol=None):
    """Per-draw block-maximum law from a (B, dim) matrix of constrained draws."""
    m = np.atleast_2d(np.asarray(draws_matrix, dtype=float))
    col = {n: i for i, n in enumerate(names)}
    try:
        if model_name == "hmev":
            if rng is None:
                raise PredictiveError("the hierarchical predictive needs an rng for future blocks")
            hyp = m[:, [col["mu_delta"], col["sigma_delta"], col["mu_gamma"], col["sigma_gamma"]]]
            return HmevLaw.from_posterior(hyp, m[:, col["lam"]], block_size, rng, future_blocks, tol)
        if model_name == "gev":
            return GevLaw(m[:, col["mu"]], m[:, col["sigma"]], m[:, col["xi"]])
        if model_name == "pot":
            if threshold is None:
                raise PredictiveError("the POT predictive needs its threshold")
            return PotLaw(m[:, col["rate"]], m[:, col["sigma_u"]], m[:, col["xi"]], threshold)
    except KeyError as exc:
        raise PredictiveError(f"draws lack column {exc} needed by the {model_name} model") from None
    raise PredictiveError(f"unknown model {model_name!r}")


# --------------------------------------------------------------------------
# point queries


def block_max_cdf_draw(y, law: BlockMaxLaw, b):
    """Block-maximum cdf of draw ``b`` at level(s) ``y``."""
    if not 0 <= b < law.B:
        raise PredictiveError(f"draw index {b} outside 0..{law.B - 1}")
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise PredictiveError("levels must be nonnegative")
    out = law.subset([b]).cdf(np.atleast_1d(y))[0]
    return float(out[0]) if y.ndim == 0 else out


def posterior_mean_cdf(y, law: BlockMaxLaw):
    """Average of the per-draw block-maximum cdfs."""
    y = np.asarray(y, dtype=float)
    out = law.cdf(np.atleast_1d(y)).mean(axis=0)
    return float(out[0]) if y.ndim == 0 else out


def return_time(y, law: BlockMaxLaw):
    """Average recurrence interval 1/(1 - cdf); +inf where the cdf reaches 1."""
    c = np.asarray(posterior_mean_cdf(y, law))
    with np.errstate(divide="ignore"):
        out = np.where(c < 1.0, 1.0 / (1.0 - c), np.inf)
    return float(out) if out.ndim == 0 else out


@dataclass
class ReturnLevel:
    probability: float
    per_draw: np.ndarray
    mean: float
    lower: float
    upper: float


def return_level(law: BlockMaxLaw, return_time=None, probability=None, level=0.90):
    """Per-draw levels with non-exceedance probability 1 - 1/T, aggregated by
    their mean and central credible quantiles."""
    if (return_time is None) == (probability is None):
        raise PredictiveError("give exactly one of return_time or probability")
    p = float(_prob_from_return_time(return_time)) if probability is None else float(probability)
    if not 0 < p < 1:
        raise PredictiveError("probability must lie in (0, 1)")
    q = law.quantiles([p])[:, 0]
    if not np.all(np.isfinite(q)):
        warnings.warn("some draws never reach the target probability; reporting +inf", RuntimeWarning)
    lo, hi = _band(q[:, None], level)
    return ReturnLevel(p, q, float(np.mean(q)), float(lo[0]), float(hi[0]))


def invert_cdf(cdf, p, lo=0.0, hi=1.0, tol=1e-10, max_grow=200):
    """Smallest y with cdf(y) >= p by bisection; the upper end of the bracket
    grows geometrically until it covers p. Returns +inf (with a warning) if the
    cdf plateaus below p."""
    if not 0 < p < 1:
        raise PredictiveError("probability must lie in (0, 1)")
    hi = max(hi, lo + tol, 1e-300)
    for _ in range(max_grow):
        if cdf(hi) >= p:
            break
        lo, hi = hi, 2.0 * hi
    else:
        warnings.warn(f"cdf stays below {p} up to {hi:g}; reporting +inf", RuntimeWarning)
        return float("inf")
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mean_cdf_quantile(law: BlockMaxLaw, probability, tol=1e-10):
    """Level where the posterior-mean cdf equals ``probability``."""
    start = float(np.nanmax(np.where(np.isfinite(q := law.quantiles([probability])[:, 0]), q, np.nan)))
    return invert_cdf(lambda y: posterior_mean_cdf(y, law), probability, 0.0, start, tol)


# --------------------------------------------------------------------------
# curves


def _band(per_draw, level):
    alpha = (1.0 - level) / 2.0
    return (np.quantile(per_draw, alpha, axis=0), np.quantile(per_draw, 1.0 - alpha, axis=0))


@dataclass
class QuantileCurve:
    return_times: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.90
    model: str = ""
    per_draw: np.ndarray | None = None

    @property
    def probabilities(self):
        return 1.0 - 1.0 / self.return_times

    def at(self, return_time):
        """(mean, lower, upper) at a grid return time."""
        i = int(np.argmin(np.abs(self.return_times - return_time)))
        if not np.isclose(self.return_times[i], return_time):
            raise PredictiveError(f"return time {return_time} is not on the curve grid")
        return float(self.mean[i]), float(self.lower[i]), float(self.upper[i])

    def band_width(self, return_time):
        _, lo, hi = self.at(return_time)
        return hi - lo


def quantile_curve(law: BlockMaxLaw, return_times=None, level=0.90, keep_draws=False):
    """Mean per-draw return level and credible band on a return-time grid."""
    T = np.sort(np.asarray(DEFAULT_RETURN_TIMES if return_times is None else return_times, dtype=float))
    q = law.quantiles(_prob_from_return_time(T))
    # bisection tolerance can reorder levels that are within tol of each other
    q = np.maximum.accumulate(q, axis=1)
    lo, hi = _band(q, level)
    return QuantileCurve(T, q.mean(axis=0), lo, hi, level, law.model, q if keep_draws else None)


def curves_to_csv(curves, path=None, header_lines=()):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "return_time", "probability", "mean", "lower", "upper"])
    for c in curves:
        for T, p, m, lo, hi in zip(c.return_times, c.probabilities, c.mean, c.lower, c.upper):
            w.writerow([c.model, repr(float(T)), repr(float(p)), repr(float(m)),
                        repr(float(lo)), repr(float(hi))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# --------------------------------------------------------------------------
# replicated data for predictive checks


@dataclass
class Replicates:
    """One replicated record per posterior draw: per-block counts, maxima and a
    single randomly chosen event (NaN where a block has no events)."""

    model: str
    counts: np.ndarray  # (B, J)
    maxima: np.ndarray  # (B, J)
    events: np.ndarray  # (B, J)

    def to_csv(self, path=None, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "draw", "block", "count", "maximum", "event"])
        B, J = self.maxima.shape
        for b in range(B):
            for j in range(J):
                w.writerow([self.model, b, j + 1, int(self.counts[b, j]),
                            repr(float(self.maxima[b, j])), repr(float(self.events[b, j]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _weibull_block(rng, n, shape, scale):
    u = rng.random(n)
    x = scale * (-np.log1p(-u)) ** (1.0 / shape)
    return np.maximum(x, np.finfo(float).tiny)


def simulate_predictive(model_name, draws_matrix, names, n_blocks, rng, block_size=366,
                        threshold=None):
    """Replicate ``n_blocks`` blocks from the generative model for each draw.

    Hierarchical draws reuse their own per-block Weibull parameters (block j of
    the replicate has the parameters of observed block j) with fresh counts.
    GEV replicates only maxima; POT replicates exceedances of the threshold,
    and a block without exceedances has NaN maximum.
    """
    m = np.atleast_2d(np.asarray(draws_matrix, dtype=float))
    col = {n: i for i, n in enumerate(names)}
    B, J = m.shape[0], int(n_blocks)
    counts = np.zeros((B, J), dtype=np.int64)
    maxima = np.full((B, J), np.nan)
    events = np.full((B, J), np.nan)
    if model_name == "hmev":
        gam_cols = [col[f"gamma[{j + 1}]"] for j in range(J)]
        dlt_cols = [col[f"delta[{j + 1}]"] for j in range(J)]
        counts = rng.binomial(block_size, np.repeat(m[:, [col["lam"]]], J, axis=1))
        for b in range(B):
            for j in range(J):
                k = counts[b, j]
                if k:
                    x = _weibull_block(rng, k, m[b, gam_cols[j]], m[b, dlt_cols[j]])
                    maxima[b, j] = x.max()
                    events[b, j] = x[rng.integers(k)]
    elif model_name == "gev":
        law = GevLaw(m[:, col["mu"]], m[:, col["sigma"]], m[:, col["xi"]])
        u = rng.random((B, J)) * (1 - 2e-16) + 1e-16
        for j in range(J):
            maxima[:, j] = _gev_draw(law, u[:, j])
    elif model_name == "pot":
        if threshold is None:
            raise PredictiveError("the POT replicates need the threshold")
        counts = rng.poisson(np.repeat(m[:, [col["rate"]]], J, axis=1))
        for b in range(B):
            g = dist.GPD(threshold, m[b, col["sigma_u"]], m[b, col["xi"]])
            for j in range(J):
                k = counts[b, j]
                if k:
                    x = np.asarray(g.sample(rng, k), dtype=float)
                    maxima[b, j] = x.max()
                    events[b, j] = x[rng.integers(k)]
    else:
        raise PredictiveError(f"unknown model {model_name!r}")
    return Replicates(model_name, counts, maxima, events)


def _gev_draw(law, u):
    lg = np.log(-np.log(u))
    xi = law.shape
    small = np.abs(xi) < XI_EPS
    z = np.where(small, -lg, np.expm1(-xi * lg) / np.where(small, 1.0, xi))
    return law.loc + law.scale * z


# --------------------------------------------------------------------------
# analytic block-maximum cdf at fixed hyperparameters (verification only)


def _latent_axis(loc, scale):
    """(density, lower, upper) of a truncated-Gumbel latent; the range leaves
    out probability 1e-15 at each end. Zero scale gives a point mass."""
    if scale == 0:
        return None, float(loc), float(loc)
    tg = dist.TruncatedGumbel(loc, scale)
    log_norm = tg.log_norm()

    def density(x):
        z = (x - loc) / scale
        return math.exp(-z - math.exp(-z) - log_norm) / scale

    return density, float(tg.quantile(1e-15)), float(tg.quantile(1.0 - 1e-15))


def _latent_expectation(h, hypers, epsrel=1e-8):
    """E[h(shape, scale)] over independent truncated-Gumbel latents by nested
    adaptive Gauss-Kronrod quadrature, one latent per level."""
    mu_d, s_d, mu_g, s_g = (float(v) for v in hypers)
    gd, d_lo, d_hi = _latent_axis(mu_d, s_d)
    gg, g_lo, g_hi = _latent_axis(mu_g, s_g)

    def inner(g):
        if gd is None:
            return h(g, mu_d)
        return integrate.quad(lambda d: h(g, d) * gd(d), d_lo, d_hi, epsabs=0.0,
                              epsrel=epsrel, limit=200)[0]

    if gg is None:
        return inner(mu_g)
    return integrate.quad(lambda g: inner(g) * gg(g), g_lo, g_hi, epsabs=0.0,
                          epsrel=epsrel, limit=200)[0]


def exact_cdf(y, hypers, rate, block_size=366):
    """Block-maximum cdf with binomial counts and truncated-Gumbel latents,
    summing over every count value: E_theta[sum_n Bin(n) F^n]. The inner sum
    is evaluated as the binomial generating function (1 - rate * S)^N."""
    y = float(y)
    if y <= 0:
        return float(stats.binom.pmf(0, block_size, rate))

    def h(g, d):
        return math.exp(block_size * math.log1p(-rate * math.exp(-((y / d) ** g))))

    return _latent_expectation(h, hypers)


def linearized_cdf(y, hypers, rate, block_size=366):
    """Tail approximation 1 - E[n] * E_theta[S(y; theta)]; clamped at 0 with a
    warning where the approximation leaves its range of validity."""
    y = float(y)
    if y <= 0:
        expected_s = 1.0
    else:
        expected_s = _latent_expectation(lambda g, d: math.exp(-((y / d) ** g)), hypers)
    out = 1.0 - block_size * rate * expected_s
    if out < 0:
        warnings.warn(f"linearized cdf {out:.3g} < 0 at y={y:g}; clamped to 0", RuntimeWarning)
        return 0.0
    return float(out)


def exact_quantile(p, hypers, rate, block_size=366, xtol=1e-9):
    """Level where :func:`exact_cdf` equals ``p`` (bracketed root search)."""
    f = lambda y: exact_cdf(y, hypers, rate, block_size) - p  # noqa: E731
    hi = float(hypers[0])
    while f(hi) < 0:
        hi *= 2.0
    return optimize.brentq(f, 0.0 if f(0.0) < 0 else hi / 2, hi, xtol=xtol, rtol=1e-12)


def fixed_point_law(hypers, rate, block_size, rng, future_blocks):
    """Single-draw hierarchical law at fixed hyperparameters."""
    return HmevLaw.from_posterior(np.asarray(hypers, dtype=float)[None, :], [rate], block_size,
                                  rng, future_blocks)


__all__ = [
    "BlockMaxLaw", "HmevLaw", "GevLaw", "PotLaw", "law_from_draws", "block_max_cdf_draw",
    "posterior_mean_cdf", "return_time", "return_level", "ReturnLevel", "invert_cdf",
    "mean_cdf_quantile", "QuantileCurve", "quantile_curve", "curves_to_csv", "Replicates",
    "simulate_predictive", "exact_cdf", "linearized_cdf", "exact_quantile", "fixed_point_law",
]
