"""Log-posteriors, priors and forward simulators for the HMEV, GEV and POT models.

Each model works on a flat unconstrained vector: positive quantities are
log-transformed, the occurrence rate is logit-transformed and real quantities
are left alone. ``log_density`` returns the log-posterior including the
log-Jacobian of that map, together with its exact gradient.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import optimize, special

from . import dist, kernels

DEFAULT_BLOCK_SIZE = 366
WET_DAY_THRESHOLD = 0.3  # mm; smaller accumulations are not events
GEV_SHAPE_MEAN = 0.114
GEV_SHAPE_SD = 0.125


class ModelError(ValueError):
    """Bad model input (data, priors or parameter vector)."""


# --------------------------------------------------------------------------
# data containers


@dataclass
class BlockData:
    n: int
    magnitudes: np.ndarray

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=float).ravel()
        if len(self.magnitudes) != self.n:
            raise ModelError(f"block has n={self.n} but {len(self.magnitudes)} magnitudes")

    @property
    def maximum(self):
        return float(self.magnitudes.max()) if self.n else 0.0


@dataclass
class Dataset:
    """Ordered blocks of event magnitudes (one block per year)."""

    blocks: list
    block_size: int = DEFAULT_BLOCK_SIZE
    labels: list | None = None

    def __post_init__(self):
        if not self.blocks:
            raise ModelError("a dataset needs at least one block")
        for b in self.blocks:
            if b.n > self.block_size:
                raise ModelError(f"block with {b.n} events exceeds block size {self.block_size}")
            if b.n and np.any(b.magnitudes <= 0):
                raise ModelError("event magnitudes must be positive")
        if self.labels is not None and len(self.labels) != len(self.blocks):
            raise ModelError("labels must match blocks")

    @classmethod
    def from_lists(cls, magnitude_lists, block_size=DEFAULT_BLOCK_SIZE, labels=None):
        return cls([BlockData(len(m), np.asarray(m, dtype=float)) for m in magnitude_lists],
                   block_size, labels)

    @property
    def J(self):
        return len(self.blocks)

    @property
    def counts(self):
        return np.array([b.n for b in self.blocks], dtype=np.int64)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64)

    @property
    def magnitudes(self):
        if not any(b.n for b in self.blocks):
            return np.zeros(0)
        return np.concatenate([b.magnitudes for b in self.blocks])

    @property
    def maxima(self):
        """Block maxima of the nonempty blocks."""
        return np.array([b.maximum for b in self.blocks if b.n], dtype=float)

    def subset(self, index):
        labels = [self.labels[i] for i in index] if self.labels is not None else None
        return Dataset([self.blocks[i] for i in index], self.block_size, labels)

    def censored(self, threshold=WET_DAY_THRESHOLD):
        """Drop magnitudes at or below ``threshold`` (instrument sensitivity)."""
        blocks = []
        for b in self.blocks:
            keep = b.magnitudes[b.magnitudes > threshold]
            blocks.append(BlockData(len(keep), keep))
        return Dataset(blocks, self.block_size, self.labels)

    # columnar CSV: block,event,magnitude. An empty block is one row with
    # event 0 and a blank magnitude; events are numbered from 1.
    def to_csv(self, path=None, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write(f"# block_size={self.block_size}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", "event", "magnitude", "label"])
        for j, b in enumerate(self.blocks):
            label = "" if self.labels is None else self.labels[j]
            if b.n == 0:
                w.writerow([j, 0, "", label])
            for i, x in enumerate(b.magnitudes):
                w.writerow([j, i + 1, repr(float(x)), label])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text):
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(path_or_text).read_text()
        block_size = DEFAULT_BLOCK_SIZE
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                if line[1:].strip().startswith("block_size="):
                    block_size = int(line.split("=", 1)[1])
                continue
            rows.append(line)
        reader = csv.DictReader(rows)
        mags, labels = {}, {}
        for r in reader:
            j = int(r["block"])
            mags.setdefault(j, [])
            labels[j] = r.get("label", "") or ""
            if int(r["event"]) > 0:
                mags[j].append(float(r["magnitude"]))
        if not mags:
            raise ModelError("dataset file holds no blocks")
        order = sorted(mags)
        if order != list(range(len(order))):
            raise ModelError("block indices must run 0..J-1")
        lab = [labels[j] for j in order]
        return cls.from_lists([mags[j] for j in order], block_size,
                              lab if any(lab) else None)


# --------------------------------------------------------------------------
# priors


@dataclass
class PriorConfig:
    """Inverse-gamma hyperpriors on (mu_delta, sigma_delta, mu_gamma, sigma_gamma)
    and a beta prior on the binomial occurrence rate."""

    mu_delta_shape: float = 5.0
    mu_delta_scale: float = 40.0
    sigma_delta_shape: float = 5.0
    sigma_delta_scale: float = 10.0
    mu_gamma_shape: float = 5.0
    mu_gamma_scale: float = 4.0 * 2.0 / 3.0
    sigma_gamma_shape: float = 5.0
    sigma_gamma_scale: float = 4.0 * 0.05 * 2.0 / 3.0
    lam_a: float = 2.0
    lam_b: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ModelError(f"prior parameter {f.name} must be positive")

    def hyper_priors(self):
        return [dist.InvGamma(self.mu_delta_shape, self.mu_delta_scale),
                dist.InvGamma(self.sigma_delta_shape, self.sigma_delta_scale),
                dist.InvGamma(self.mu_gamma_shape, self.mu_gamma_scale),
                dist.InvGamma(self.sigma_gamma_shape, self.sigma_gamma_scale)]

    def rate_prior(self):
        return dist.Beta(self.lam_a, self.lam_b)


@dataclass
class GevPriors:
    """normal(loc_mean, loc_sd) on mu, half-normal(scale_sd) on sigma, normal on xi."""

    loc_mean: float
    loc_sd: float
    scale_sd: float
    shape_mean: float = GEV_SHAPE_MEAN
    shape_sd: float = GEV_SHAPE_SD

    @classmethod
    def from_maxima(cls, maxima):
        maxima = np.asarray(maxima, dtype=float)
        if maxima.size < 2:
            raise ModelError("GEV priors need at least two maxima")
        sd = float(np.std(maxima, ddof=1)) or 1.0
        return cls(float(np.mean(maxima)), sd, sd)


@dataclass
class PotPriors:
    """gamma(rate_shape, rate_scale) on the exceedance rate, half-normal on the
    GPD scale, normal on xi."""

    rate_shape: float
    rate_scale: float
    scale_sd: float
    shape_mean: float = GEV_SHAPE_MEAN
    shape_sd: float = GEV_SHAPE_SD

    @classmethod
    def from_exceedances(cls, counts, excesses):
        mean_count = max(float(np.mean(counts)), 0.1)
        mean_excess = float(np.mean(excesses)) if len(excesses) else 1.0
        return cls(2.0, mean_count / 2.0, 2.0 * mean_excess)


def default_priors(data: Dataset, shape=5.0) -> PriorConfig:
    """Hyperpriors centred on the climatological mean magnitude and a Weibull
    shape of 2/3, with latent-scale priors at 25% and 5% of those centres."""
    mags = data.magnitudes
    mags = mags[mags > 0]
    if mags.size == 0:
        raise ModelError("no positive magnitudes to centre the priors on")
    mu_delta = float(mags.mean())
    mu_gamma = 2.0 / 3.0
    k = shape - 1.0
    return PriorConfig(shape, k * mu_delta, shape, k * 0.25 * mu_delta,
                       shape, k * mu_gamma, shape, k * 0.05 * mu_gamma, 2.0, 2.0)


def save_config(path, **sections):
    """Write dataclass sections (e.g. hmev=PriorConfig(...)) to a key-value file."""
    cp = configparser.ConfigParser()
    for name, obj in sections.items():
        cp[name] = {k: repr(v) if isinstance(v, float) else str(v)
                    for k, v in (asdict(obj) if hasattr(obj, "__dataclass_fields__") else obj).items()}
    buf = io.StringIO()
    cp.write(buf)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def load_prior_config(path, section="hmev_priors"):
    cp = configparser.ConfigParser()
    cp.read(path)
    if section not in cp:
        raise ModelError(f"config has no [{section}] section")
    known = {f.name for f in fields(PriorConfig)}
    values = {k: float(v) for k, v in cp[section].items() if k in known}
    unknown = set(cp[section]) - known
    if unknown:
        raise ModelError(f"unknown prior keys: {sorted(unknown)}")
    return PriorConfig(**values)


def threshold_select(data: Dataset, q=0.95) -> float:
    """Empirical q-quantile (linear interpolation) of all positive magnitudes."""
    if not 0 <= q < 1:
        raise ModelError("threshold quantile must lie in [0, 1)")
    mags = data.magnitudes
    mags = mags[mags > 0]
    if mags.size < 30:
        raise ModelError(f"only {mags.size} events; need at least 30 to pick a threshold "
                         "(use a longer record or a lower quantile)")
    return float(np.quantile(mags, q))


# --------------------------------------------------------------------------
# models


def _log_expit(u):
    return -np.logaddexp(0.0, -u)


_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _normal_lpdf(x, mean, sd):
    u = (x - mean) / sd
    return -0.5 * u * u - math.log(sd) - _LOG_SQRT_2PI


def _half_normal_lpdf(x, sd):
    u = x / sd
    return math.log(2.0) - 0.5 * u * u - math.log(sd) - _LOG_SQRT_2PI


def _gamma_lpdf(x, shape, scale):
    return (shape - 1.0) * math.log(x) - x / scale - math.lgamma(shape) - shape * math.log(scale)


def _log1p_ratio(xi, z, t):
    # q = log1p(xi z)/xi and dq/dxi for scalar xi; series near xi = 0
    if abs(xi) >= 1e-5:
        q = np.log(t) / xi
        return q, (z / t - q) / xi
    return dist._xi_series(xi, z)


class HmevModel:
    """Weibull magnitudes with per-block truncated-Gumbel latent parameters and
    binomial occurrences.

    Unconstrained layout: log(mu_delta, sigma_delta, mu_gamma, sigma_gamma),
    logit(lambda), log(gamma_1..J), log(delta_1..J).
    """

    name = "hmev"

    def __init__(self, data: Dataset, priors: PriorConfig | None = None):
        self.data = data
        self.priors = priors or default_priors(data)
        self.J = data.J
        self.N = data.block_size
        self.dim = 5 + 2 * self.J
        self.counts = data.counts.astype(float)
        self.offsets = np.ascontiguousarray(data.offsets, dtype=np.int_)
        self.logx = np.ascontiguousarray(np.log(data.magnitudes) if data.magnitudes.size else np.zeros(0))
        block = np.repeat(np.arange(self.J), data.counts)
        self.sum_logx = np.bincount(block, self.logx, minlength=self.J).astype(float)
        hp = self.priors.hyper_priors()
        self.ig_shape = np.array([p.shape for p in hp])
        self.ig_scale = np.array([p.scale for p in hp])
        log_binom = np.sum(special.gammaln(self.N + 1) - special.gammaln(self.counts + 1)
                           - special.gammaln(self.N - self.counts + 1))
        # every additive term of the log-posterior that does not depend on the parameters
        self.const_term = float(np.sum(self.ig_shape * np.log(self.ig_scale) - special.gammaln(self.ig_shape))
                                - special.betaln(self.priors.lam_a, self.priors.lam_b) + log_binom)

    @property
    def param_names(self):
        return (["mu_delta", "sigma_delta", "mu_gamma", "sigma_gamma", "lam"]
                + [f"gamma[{j + 1}]" for j in range(self.J)]
                + [f"delta[{j + 1}]" for j in range(self.J)])

    def constrain(self, v):
        v = np.asarray(v, dtype=float)
        out = np.exp(v)
        out[..., 4] = special.expit(v[..., 4])
        return out

    def unconstrain(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.log(theta)
        out[..., 4] = special.logit(theta[..., 4])
        return out

    def log_jacobian(self, v):
        v = np.asarray(v, dtype=float)
        return float(np.sum(np.delete(v, 4)) + _log_expit(v[4]) + _log_expit(-v[4]))

    def log_density(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ModelError(f"expected a vector of length {self.dim}, got shape {v.shape}")
        return kernels.hmev_log_density(v, self)

    def initial_point(self, rng=None, jitter=0.0):
        pri = self.priors
        hyp = np.array([p.mean() for p in pri.hyper_priors()])
        lam = float(np.clip(self.counts.mean() / self.N, 0.5 / self.N, 1 - 0.5 / self.N))
        gam = np.full(self.J, hyp[2])
        dlt = np.full(self.J, hyp[0])
        for j, b in enumerate(self.data.blocks):
            if b.n >= 3:
                fit = weibull_moments_fit(b.magnitudes)
                if fit is not None:
                    gam[j], dlt[j] = fit
        theta = np.concatenate([hyp, [lam], gam, dlt])
        v = self.unconstrain(theta)
        if jitter and rng is not None:
            v = v + rng.uniform(-jitter, jitter, size=v.shape)
        return v


def weibull_moments_fit(x):
    """Method-of-moments Weibull (shape, scale); None when the sample is degenerate."""
    x = np.asarray(x, dtype=float)
    m, s = x.mean(), x.std(ddof=1) if x.size > 1 else 0.0
    if not (m > 0 and s > 0):
        return None
    cv2 = (s / m) ** 2

    def f(lg):
        g = np.exp(lg)
        return np.exp(special.gammaln(1 + 2 / g) - 2 * special.gammaln(1 + 1 / g)) - 1 - cv2

    lo, hi = np.log(0.05), np.log(50.0)
    if f(lo) * f(hi) > 0:
        return None
    g = float(np.exp(optimize.brentq(f, lo, hi, xtol=1e-12)))
    return g, float(m / special.gamma(1 + 1 / g))


class GevModel:
    """GEV for block maxima; unconstrained layout (mu, log sigma, xi)."""

    name = "gev"
    param_names = ["mu", "sigma", "xi"]
    dim = 3

    def __init__(self, maxima, priors: GevPriors | None = None):
        self.maxima = np.asarray(maxima, dtype=float)
        if self.maxima.size == 0:
            raise ModelError("GEV model needs at least one block maximum")
        self.priors = priors or GevPriors.from_maxima(self.maxima)

    def constrain(self, v):
        out = np.array(v, dtype=float)
        out[..., 1] = np.exp(out[..., 1])
        return out

    def unconstrain(self, theta):
        out = np.array(theta, dtype=float)
        out[..., 1] = np.log(out[..., 1])
        return out

    def log_jacobian(self, v):
        return float(v[1])

    def log_density(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (3,):
            raise ModelError(f"expected a vector of length 3, got shape {v.shape}")
        mu, ls, xi = (float(x) for x in v)
        if not (abs(ls) < 700 and math.isfinite(mu) and math.isfinite(xi)):
            return -np.inf, np.zeros(3)
        sig = math.exp(ls)
        z = (self.maxima - mu) / sig
        t = 1.0 + xi * z
        if t.min() <= 0:
            return -np.inf, np.zeros(3)
        q, dq = _log1p_ratio(xi, z, t)
        with np.errstate(over="ignore"):
            a = np.exp(-q)
        n = z.size
        pr = self.priors
        lp = (-n * ls - (xi + 1.0) * q.sum() - a.sum()
              + _normal_lpdf(mu, pr.loc_mean, pr.loc_sd) + _half_normal_lpdf(sig, pr.scale_sd) + ls
              + _normal_lpdf(xi, pr.shape_mean, pr.shape_sd))
        d_z = -(xi + 1.0 - a) / t
        grad = np.array([
            -d_z.sum() / sig - (mu - pr.loc_mean) / pr.loc_sd**2,
            -n - (d_z * z).sum() - sig * sig / pr.scale_sd**2 + 1.0,
            (-z / t - (1.0 - a) * dq).sum() - (xi - pr.shape_mean) / pr.shape_sd**2,
        ])
        if not math.isfinite(lp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(3)
        return float(lp), grad

    def initial_point(self, rng=None, jitter=0.0):
        y = self.maxima
        sd = float(np.std(y, ddof=1)) if y.size > 1 else max(float(y[0]) * 0.3, 1e-3)
        sig = max(sd * np.sqrt(6) / np.pi, 1e-6)
        mu = float(np.mean(y)) - dist.EULER_GAMMA * sig
        v = np.array([mu, np.log(sig), 0.05])
        if jitter and rng is not None:
            v = v + rng.uniform(-jitter, jitter, 3) * np.array([sig, 1.0, 0.5])
        return v


class PotModel:
    """Poisson exceedance counts and GPD excesses over a fixed threshold u.

    Unconstrained layout (log rate, log sigma_u, xi); rate is per block.
    """

    name = "pot"
    param_names = ["rate", "sigma_u", "xi"]
    dim = 3

    def __init__(self, data: Dataset, threshold: float, priors: PotPriors | None = None):
        self.data = data
        self.threshold = float(threshold)
        self.counts = np.array([np.sum(b.magnitudes > threshold) for b in data.blocks], dtype=float)
        mags = data.magnitudes
        self.excesses = mags[mags > threshold] - threshold
        self.priors = priors or PotPriors.from_exceedances(self.counts, self.excesses)
        self._log_fact = float(np.sum(special.gammaln(self.counts + 1)))
        self._total = float(self.counts.sum())

    def constrain(self, v):
        out = np.array(v, dtype=float)
        out[..., :2] = np.exp(out[..., :2])
        return out

    def unconstrain(self, theta):
        out = np.array(theta, dtype=float)
        out[..., :2] = np.log(out[..., :2])
        return out

    def log_jacobian(self, v):
        return float(v[0] + v[1])

    def log_density(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (3,):
            raise ModelError(f"expected a vector of length 3, got shape {v.shape}")
        lr, ls, xi = (float(x) for x in v)
        if not (abs(lr) < 700 and abs(ls) < 700 and math.isfinite(xi)):
            return -np.inf, np.zeros(3)
        rate, sig = math.exp(lr), math.exp(ls)
        pr = self.priors
        J = len(self.counts)
        K = self._total
        lp = K * lr - J * rate - self._log_fact
        grad = np.array([K - J * rate, 0.0, 0.0])
        if self.excesses.size:
            z = self.excesses / sig
            t = 1.0 + xi * z
            if t.min() <= 0:
                return -np.inf, np.zeros(3)
            q, dq = _log1p_ratio(xi, z, t)
            lp += -z.size * ls - (xi + 1.0) * q.sum()
            d_z = -(xi + 1.0) / t
            grad[1] += -z.size - (d_z * z).sum()
            grad[2] += (-z / t - dq).sum()
        lp += (_gamma_lpdf(rate, pr.rate_shape, pr.rate_scale) + lr
               + _half_normal_lpdf(sig, pr.scale_sd) + ls
               + _normal_lpdf(xi, pr.shape_mean, pr.shape_sd))
        grad[0] += pr.rate_shape - rate / pr.rate_scale
        grad[1] += -sig * sig / pr.scale_sd**2 + 1.0
        grad[2] += -(xi - pr.shape_mean) / pr.shape_sd**2
        if not math.isfinite(lp) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(3)
        return float(lp), grad

    def initial_point(self, rng=None, jitter=0.0):
        rate = max(self.counts.mean(), 0.1)
        me = self.excesses.mean() if self.excesses.size else 1.0
        v = np.array([np.log(rate), np.log(0.9 * me), 0.1])
        if jitter and rng is not None:
            v = v + rng.uniform(-jitter, jitter, 3) * np.array([1.0, 1.0, 0.5])
        return v


def hmev_log_posterior(v, data, priors):
    return HmevModel(data, priors).log_density(v)


def gev_log_posterior(v, maxima, priors=None):
    return GevModel(maxima, priors).log_density(v)


def pot_log_posterior(v, data, threshold, priors=None):
    return PotModel(data, threshold, priors).log_density(v)


MODEL_NAMES = ("hmev", "gev", "pot")


@dataclass
class ModelOptions:
    threshold_quantile: float = 0.95
    hmev_priors: PriorConfig | None = None
    extra: dict = field(default_factory=dict)


def build_model(name, data: Dataset, options: ModelOptions | None = None):
    """Model ``name`` trained on ``data`` with default (data-scaled) priors."""
    options = options or ModelOptions()
    if name == "hmev":
        return HmevModel(data, options.hmev_priors)
    if name == "gev":
        return GevModel(data.maxima)
    if name == "pot":
        return PotModel(data, threshold_select(data, options.threshold_quantile))
    raise ModelError(f"unknown model {name!r}; choose from {MODEL_NAMES}")


# --------------------------------------------------------------------------
# forward simulation


def _latent(rng, loc, scale, size):
    if scale == 0:
        return np.full(size, float(loc))
    return dist.TruncatedGumbel(loc, scale).sample(rng, size)


def hmev_generate(hypers, lam, block_size, n_blocks, rng) -> Dataset:
    """Simulate a dataset from the hierarchical model.

    ``hypers`` = (mu_delta, sigma_delta, mu_gamma, sigma_gamma); zero latent
    scales give fixed Weibull parameters.
    """
    mu_d, s_d, mu_g, s_g = (float(h) for h in hypers)
    counts = rng.binomial(block_size, lam, n_blocks)
    dlt = _latent(rng, mu_d, s_d, n_blocks)
    gam = _latent(rng, mu_g, s_g, n_blocks)
    blocks = []
    for j in range(n_blocks):
        u = rng.random(counts[j])
        x = dlt[j] * (-np.log1p(-u)) ** (1.0 / gam[j])
        blocks.append(BlockData(int(counts[j]), np.maximum(x, np.finfo(float).tiny)))
    return Dataset(blocks, block_size)
