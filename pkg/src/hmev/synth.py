"""Synthetic rainfall scenarios: fixed-parameter GP, GAM and WEI parents, the
dynamic WEI_G parent with per-block latent Weibull parameters, and binomial or
beta-binomial event counts.

Every random component has its own stream derived from (seed, replicate,
half, component), so a WEI_G scenario with zero latent scales reproduces the
WEI scenario draw for draw.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import dist, predictive
from .models import DEFAULT_BLOCK_SIZE, BlockData, Dataset
from .rng import stream

FAMILIES = ("GP", "GAM", "WEI", "WEI_G")
COUNT_MODELS = ("betabinomial", "binomial")


class ScenarioError(ValueError):
    """Invalid scenario specification."""


def betabinom_from_moments(mean, var, trials):
    """(alpha, beta) of the beta-binomial with the given mean and variance."""
    if not 0 < mean < trials:
        raise ScenarioError(f"mean count {mean} must lie strictly between 0 and {trials}")
    p = mean / trials
    floor = trials * p * (1.0 - p)
    if not var > floor:
        raise ScenarioError(f"variance {var} does not exceed the binomial variance {floor:.6g} "
                            "at this mean; use the binomial count model instead")
    r = var / floor
    if not r < trials:
        raise ScenarioError(f"variance {var} exceeds the largest beta-binomial variance "
                            f"{trials * floor:.6g} at this mean")
    s = (trials - r) / (r - 1.0)
    return p * s, (1.0 - p) * s


@dataclass
class ScenarioSpec:
    family: str = "WEI"
    count_model: str = "betabinomial"
    count_mean: float = 100.0
    count_var: float = 150.0
    rate: float = 0.3  # binomial count model only
    block_size: int = DEFAULT_BLOCK_SIZE
    wei_shape: float = 0.7
    wei_scale: float = 9.0
    gam_shape: float = 0.8
    gam_scale: float = 11.0
    gp_shape: float = 0.114
    gp_scale: float = 7.0
    gp_threshold: float = 0.0
    mu_gamma: float = 0.7
    sigma_gamma: float = 0.035
    mu_delta: float = 9.0
    sigma_delta: float = 2.25
    m_train: int = 50
    m_test: int = 500
    replicates: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ScenarioError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.count_model not in COUNT_MODELS:
            raise ScenarioError(f"unknown count model {self.count_model!r}; choose from {COUNT_MODELS}")
        if self.m_train < 1 or self.m_test < 1 or self.replicates < 1:
            raise ScenarioError("m_train, m_test and replicates must be at least 1")
        if self.block_size < 1:
            raise ScenarioError("block size must be positive")
        if self.count_model == "betabinomial":
            betabinom_from_moments(self.count_mean, self.count_var, self.block_size)
        elif not 0 < self.rate < 1:
            raise ScenarioError("binomial rate must lie in (0, 1)")
        for name in ("wei_shape", "wei_scale", "gam_shape", "gam_scale", "gp_scale",
                     "mu_gamma", "mu_delta"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive")
        if self.sigma_gamma < 0 or self.sigma_delta < 0:
            raise ScenarioError("latent scales must be nonnegative")
        if self.gp_threshold < 0:
            raise ScenarioError("GP threshold must be nonnegative")

    @classmethod
    def from_dict(cls, d):
        bad = set(d) - {f.name for f in fields(cls)}
        if bad:
            raise ScenarioError(f"unknown scenario keys: {sorted(bad)}")
        out = {}
        for k, v in d.items():
            default = getattr(cls, k)
            out[k] = type(default)(v) if not isinstance(default, str) else str(v)
        return cls(**out)

    def with_family(self, family):
        return replace(self, family=family)

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# component draws


def draw_counts(spec: ScenarioSpec, n_blocks, rng):
    if spec.count_model == "binomial":
        return rng.binomial(spec.block_size, spec.rate, n_blocks)
    a, b = betabinom_from_moments(spec.count_mean, spec.count_var, spec.block_size)
    return rng.binomial(spec.block_size, rng.beta(a, b, n_blocks))


def _uniform(rng, size):
    return rng.random(size) * (1 - 2e-16) + 1e-16


def magnitude_quantile(spec: ScenarioSpec, u, shape=None, scale=None):
    """Inverse cdf of the event-magnitude law (fixed parents, or a Weibull with
    the given latent shape/scale for WEI_G)."""
    u = np.asarray(u, dtype=float)
    if spec.family == "WEI":
        return spec.wei_scale * (-np.log1p(-u)) ** (1.0 / spec.wei_shape)
    if spec.family == "WEI_G":
        return scale * (-np.log1p(-u)) ** (1.0 / shape)
    if spec.family == "GAM":
        return stats.gamma.ppf(u, spec.gam_shape, scale=spec.gam_scale)
    g = dist.GPD(spec.gp_threshold, spec.gp_scale, spec.gp_shape)
    return np.asarray(g.quantile(u), dtype=float)


def magnitude_cdf(spec: ScenarioSpec, x):
    """Marginal cdf of one event magnitude (WEI_G averages over the latents)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if spec.family == "WEI":
        return np.asarray(dist.Weibull(spec.wei_shape, spec.wei_scale).cdf(x))
    if spec.family == "GAM":
        return stats.gamma.cdf(x, spec.gam_shape, scale=spec.gam_scale)
    if spec.family == "GP":
        return np.asarray(dist.GPD(spec.gp_threshold, spec.gp_scale, spec.gp_shape).cdf(x))
    hyp = (spec.mu_delta, spec.sigma_delta, spec.mu_gamma, spec.sigma_gamma)
    return np.array([predictive._latent_expectation(lambda g, d, v=v: -np.expm1(-(v / d) ** g), hyp,
                                                    epsrel=1e-10) for v in x])


def _latents(spec, n_blocks, rng_delta, rng_gamma):
    def one(rng, loc, scale):
        u = _uniform(rng, n_blocks)
        if scale == 0:
            return np.full(n_blocks, float(loc))
        return np.asarray(dist.TruncatedGumbel(loc, scale).quantile(u))

    return one(rng_gamma, spec.mu_gamma, spec.sigma_gamma), one(rng_delta, spec.mu_delta, spec.sigma_delta)


def generate_series(spec: ScenarioSpec, n_blocks, seed, *labels):
    """One dataset of ``n_blocks`` blocks from streams keyed by (seed, *labels)."""
    counts = draw_counts(spec, n_blocks, stream(seed, *labels, "counts"))
    mag_rng = stream(seed, *labels, "magnitudes")
    if spec.family == "WEI_G":
        gam, dlt = _latents(spec, n_blocks, stream(seed, *labels, "delta"), stream(seed, *labels, "gamma"))
    else:
        gam = np.full(n_blocks, spec.wei_shape)
        dlt = np.full(n_blocks, spec.wei_scale)
    blocks = []
    for j in range(n_blocks):
        u = _uniform(mag_rng, counts[j])
        if spec.family in ("WEI", "WEI_G"):
            x = dlt[j] * (-np.log1p(-u)) ** (1.0 / gam[j])
        else:
            x = magnitude_quantile(spec, u)
        blocks.append(BlockData(int(counts[j]), np.maximum(x, np.finfo(float).tiny)))
    return Dataset(blocks, spec.block_size)


def generate_scenario(spec: ScenarioSpec, replicate):
    """(train, test) pair for replicate ``replicate``; the halves use disjoint streams."""
    if replicate < 0:
        raise ScenarioError("replicate index must be nonnegative")
    # streams are shared across families on purpose: counts (and uniforms) are
    # common random numbers between scenarios of the same replicate
    train = generate_series(spec, spec.m_train, spec.seed, int(replicate), "train")
    test = generate_series(spec, spec.m_test, spec.seed, int(replicate), "test")
    return train, test


def spec_metadata(spec: ScenarioSpec):
    return {"family": spec.family, "seed": spec.seed,
            "parameter_source": "package defaults (substitutes for unpublished scenario values)"}


def write_scenario(spec: ScenarioSpec, outdir, header_lines=(), replicates=None):
    """Write train/test CSVs for each replicate plus a JSON sidecar of the spec.

    Returns the list of written paths.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    reps = range(spec.replicates) if replicates is None else replicates
    for r in reps:
        train, test = generate_scenario(spec, r)
        for half, data in (("train", train), ("test", test)):
            p = outdir / f"{spec.family}_r{r:03d}_{half}.csv"
            data.to_csv(p, list(header_lines) + [f"family={spec.family}", f"replicate={r}",
                                                 f"half={half}"])
            written.append(p)
    side = outdir / f"{spec.family}_spec.json"
    side.write_text(json.dumps({"spec": spec.to_dict(), **spec_metadata(spec),
                                "header": list(header_lines)}, indent=2, sort_keys=True) + "\n")
    written.append(side)
    return written


__all__ = ["FAMILIES", "ScenarioSpec", "ScenarioError", "betabinom_from_moments", "draw_counts",
           "magnitude_quantile", "magnitude_cdf", "generate_series", "generate_scenario",
           "write_scenario"]
