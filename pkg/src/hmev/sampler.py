"""Static-path Hamiltonian Monte Carlo with warmup adaptation.

Each iteration draws a number of leapfrog steps uniformly from
``1..max_steps``. During warmup the step size is tuned by dual averaging
towards ``target_accept`` and a diagonal inverse metric is estimated over
expanding windows; both are frozen afterwards. A transition whose energy
error exceeds ``DIVERGENCE_THRESHOLD`` (or becomes non-finite) is rejected and
counted as divergent.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import rng as rngmod

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    """Sampling could not start or had to abort."""


@dataclass
class SamplerConfig:
    chains: int = 4
    iterations: int = 2000
    warmup_fraction: float = 0.5
    target_accept: float = 0.8
    max_steps: int = 64
    seed: int = 0
    init_jitter: float = 0.1
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if self.iterations < 2:
            raise ValueError("need at least two iterations per chain")
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup fraction must lie in (0, 1)")
        if not 0 < self.target_accept < 1:
            raise ValueError("target acceptance must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def warmup(self):
        return int(round(self.iterations * self.warmup_fraction))

    @property
    def retained(self):
        return self.iterations - self.warmup


@dataclass
class PosteriorDraws:
    names: list
    unconstrained: np.ndarray  # (chains, draws, dim)
    constrained: np.ndarray  # (chains, draws, dim)
    log_density: np.ndarray  # (chains, draws)
    divergences: np.ndarray  # (chains,)

    @property
    def n_chains(self):
        return self.constrained.shape[0]

    @property
    def B(self):
        return self.constrained.shape[0] * self.constrained.shape[1]

    def matrix(self, constrained=True):
        """Draws stacked chain after chain: shape (B, dim)."""
        a = self.constrained if constrained else self.unconstrained
        return a.reshape(-1, a.shape[-1])

    def column(self, name):
        return self.matrix()[:, self.names.index(name)]


@dataclass
class Diagnostics:
    rhat: np.ndarray
    ess: np.ndarray
    divergences: int
    warmup_divergences: int
    step_size: list
    inv_metric_range: list
    accept_rate: list
    names: list = field(default_factory=list)

    @property
    def max_rhat(self):
        return float(np.max(self.rhat)) if self.rhat.size else float("nan")

    @property
    def min_ess(self):
        return float(np.min(self.ess)) if self.ess.size else float("nan")

    def to_dict(self):
        return {
            "max_rhat": _num(self.max_rhat),
            "min_ess": _num(self.min_ess),
            "divergences": int(self.divergences),
            "warmup_divergences": int(self.warmup_divergences),
            "step_size": [_num(s) for s in self.step_size],
            "inv_metric_range": [[_num(a), _num(b)] for a, b in self.inv_metric_range],
            "accept_rate": [_num(a) for a in self.accept_rate],
            "rhat": {n: _num(r) for n, r in zip(self.names, self.rhat)},
            "ess": {n: _num(e) for n, e in zip(self.names, self.ess)},
        }


def _num(x):
    x = float(x)
    if np.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


# --------------------------------------------------------------------------
# adaptation helpers


class DualAveraging:
    """Nesterov dual averaging of log step size (gamma=0.05, t0=10, kappa=0.75)."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.h_bar = 0.0
        self.log_eps = np.log(step_size)
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept_prob):
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_eps = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return np.exp(self.log_eps)

    @property
    def final(self):
        return float(np.exp(self.log_eps_bar))


def adaptation_windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """End indices (exclusive) of the metric-adaptation windows and the first index."""
    if n_warmup < 20:
        return n_warmup, []
    if init_buffer + base_window + term_buffer > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    ends = []
    start, size = init_buffer, base_window
    last = n_warmup - term_buffer
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start, size = end, 2 * size
    return init_buffer, ends


def leapfrog(target, v, p, grad, step, n_steps, inv_metric):
    """Integrate Hamilton's equations; returns (v, p, logp, grad) or None on a non-finite state."""
    p = p + 0.5 * step * grad
    lp = None
    # a blown-up trajectory is reported as divergent, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            v = v + step * inv_metric * p
            lp, grad = target(v)
            if not np.isfinite(lp):
                return None
            p = p + (step if i < n_steps - 1 else 0.5 * step) * grad
    return v, p, lp, grad


def _find_step_size(target, v, lp, grad, inv_metric, rng, step=1.0):
    """Double or halve the step until one leapfrog step crosses acceptance 1/2."""
    p = rng.standard_normal(v.size) / np.sqrt(inv_metric)
    h0 = -lp + 0.5 * np.sum(inv_metric * p**2)

    def accept_log(s):
        out = leapfrog(target, v, p, grad, s, 1, inv_metric)
        if out is None:
            return -np.inf
        _, p1, lp1, _ = out
        with np.errstate(over="ignore", invalid="ignore"):
            return h0 - (-lp1 + 0.5 * np.sum(inv_metric * p1**2))

    a = accept_log(step)
    direction = 1 if a > np.log(0.5) else -1
    for _ in range(100):
        a = accept_log(step)
        if direction == 1 and not a > np.log(0.5):
            break
        if direction == -1 and a > np.log(0.5):
            break
        step = step * 2.0 if direction == 1 else step / 2.0
        if step > 1e7 or step < 1e-10:
            break
    return float(step)


# --------------------------------------------------------------------------
# chains


@dataclass
class _ChainResult:
    draws: np.ndarray
    logp: np.ndarray
    divergences: int
    warmup_divergences: int
    step_size: float
    inv_metric: np.ndarray
    accept_rate: float


def _run_chain(target, v0, config: SamplerConfig, rng):
    v = np.array(v0, dtype=float)
    dim = v.size
    lp, grad = target(v)
    if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
        raise SamplerError("log density is not finite at the initial point")
    n_warm = config.warmup
    inv_metric = np.ones(dim)
    step = _find_step_size(target, v, lp, grad, inv_metric, rng)
    da = DualAveraging(step, config.target_accept)
    first, ends = adaptation_windows(n_warm)
    win_n, win_mean, win_m2 = 0, np.zeros(dim), np.zeros(dim)
    draws = np.empty((config.retained, dim))
    logp = np.empty(config.retained)
    div, warm_div, acc_sum = 0, 0, 0.0
    for it in range(config.iterations):
        warm = it < n_warm
        n_steps = int(rng.integers(1, config.max_steps + 1))
        p = rng.standard_normal(dim) / np.sqrt(inv_metric)
        h0 = -lp + 0.5 * np.sum(inv_metric * p**2)
        out = leapfrog(target, v, p, grad, step, n_steps, inv_metric)
        divergent = out is None
        accept_prob = 0.0
        if not divergent:
            v1, p1, lp1, g1 = out
            with np.errstate(over="ignore", invalid="ignore"):
                dh = (-lp1 + 0.5 * np.sum(inv_metric * p1**2)) - h0
            if not np.isfinite(dh) or dh > DIVERGENCE_THRESHOLD:
                divergent = True
            else:
                accept_prob = 1.0 if dh <= 0 else float(np.exp(-dh))
                if rng.random() < accept_prob:
                    v, lp, grad = v1, lp1, g1
        if warm:
            warm_div += divergent
            step = da.update(accept_prob)
            if first <= it < (ends[-1] if ends else 0):
                win_n += 1
                delta = v - win_mean
                win_mean = win_mean + delta / win_n
                win_m2 = win_m2 + delta * (v - win_mean)
                if it + 1 in ends:
                    var = win_m2 / max(win_n - 1, 1)
                    inv_metric = (win_n / (win_n + 5.0)) * var + 1e-3 * (5.0 / (win_n + 5.0))
                    win_n, win_mean, win_m2 = 0, np.zeros(dim), np.zeros(dim)
                    step = _find_step_size(target, v, lp, grad, inv_metric, rng, step)
                    da.restart(step)
            if it == n_warm - 1:
                if warm_div == n_warm:
                    raise SamplerError("every warmup transition diverged; check the model or initial values")
                step = da.final
        else:
            k = it - n_warm
            div += divergent
            acc_sum += accept_prob
            draws[k] = v
            logp[k] = lp
    return _ChainResult(draws, logp, div, warm_div, step, inv_metric,
                        acc_sum / max(config.retained, 1))


def run_hmc(target, dim, config: SamplerConfig, init, constrain=None, names=None):
    """Sample ``config.chains`` chains from ``target(v) -> (logp, grad)``.

    ``init`` is either a vector (shared start) or ``init(rng) -> vector``.
    Chain ``c`` draws all its randomness from stream ``(seed, "chain", c)``.
    """
    if dim < 1:
        raise ValueError("dimension must be positive")
    names = list(names) if names is not None else [f"x[{i}]" for i in range(dim)]

    def one(c):
        rng = rngmod.stream(config.seed, "chain", c)
        v0 = init(rng) if callable(init) else np.array(init, dtype=float)
        if np.shape(v0) != (dim,):
            raise SamplerError(f"initial point has shape {np.shape(v0)}, expected ({dim},)")
        return _run_chain(target, v0, config, rng)

    if config.workers > 1 and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, range(config.chains)))
    else:
        results = [one(c) for c in range(config.chains)]

    unc = np.stack([r.draws for r in results])
    con = np.stack([constrain(r.draws) for r in results]) if constrain is not None else unc.copy()
    draws = PosteriorDraws(names, unc, con, np.stack([r.logp for r in results]),
                           np.array([r.divergences for r in results]))
    diag = diagnose(draws)
    diag.warmup_divergences = int(sum(r.warmup_divergences for r in results))
    diag.step_size = [r.step_size for r in results]
    diag.inv_metric_range = [(float(r.inv_metric.min()), float(r.inv_metric.max())) for r in results]
    diag.accept_rate = [r.accept_rate for r in results]
    return draws, diag


def initialize(model, rng, jitter=0.1):
    """Starting vector for ``model`` (moment-based, then jittered)."""
    return model.initial_point(rng, jitter)


def fit(model, config: SamplerConfig | None = None):
    """Run the sampler on a model object exposing ``log_density`` and ``initial_point``."""
    config = config or SamplerConfig()
    return run_hmc(model.log_density, model.dim, config,
                   lambda r: initialize(model, r, config.init_jitter),
                   model.constrain, model.param_names)


# --------------------------------------------------------------------------
# diagnostics


def split_chains(x):
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def split_rhat(x):
    """Split-chain potential scale reduction for draws of shape (chains, draws).

    Constant chains (zero within-chain variance) give ``inf``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] < 4:
        raise ValueError("split R-hat needs an array (chains, draws) with at least 4 draws")
    s = split_chains(x)
    n = s.shape[1]
    means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W <= 0:
        return float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x):
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def ess(x):
    """Effective sample size of (chains, draws) using Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = np.stack([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    if W <= 0:
        return float("nan")
    var_plus = W * (n - 1.0) / n + (x.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (W - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (W - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (W - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if even > 0:
        rho[max_t + 1] = even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * np.sum(rho[:max_t + 1]) + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(min(m * n / tau, m * n))


def ess_bulk(x):
    """Rank-normalised split-chain ESS, capped at the number of draws."""
    s = split_chains(np.asarray(x, dtype=float))
    if np.ptp(s) == 0:
        return float("nan")
    r = np.argsort(np.argsort(s, axis=None, kind="stable"), kind="stable").reshape(s.shape) + 1.0
    z = special.ndtri((r - 0.375) / (s.size + 0.25))
    return ess(z)


def diagnose(draws: PosteriorDraws):
    x = draws.unconstrained
    dim = x.shape[2]
    rhat = np.empty(dim)
    eff = np.empty(dim)
    for i in range(dim):
        col = x[:, :, i]
        rhat[i] = split_rhat(col) if col.shape[1] >= 4 else np.nan
        eff[i] = ess_bulk(col) if col.shape[1] >= 4 else np.nan
    return Diagnostics(rhat, eff, int(draws.divergences.sum()), 0, [], [], [], list(draws.names))


# --------------------------------------------------------------------------
# serialisation


def draws_to_csv(draws: PosteriorDraws, path=None, header_lines=()):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain", "iteration", "lp__"] + list(draws.names))
    C, D, _ = draws.constrained.shape
    for c in range(C):
        for d in range(D):
            w.writerow([c, d, repr(float(draws.log_density[c, d]))]
                       + [repr(float(x)) for x in draws.constrained[c, d]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def draws_from_csv(path, unconstrain=None):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = [r for r in reader]
    if not rows:
        raise ValueError(f"{path}: no draws")
    data = np.array([[float(x) for x in r] for r in rows])
    chains = data[:, 0].astype(int)
    C = chains.max() + 1
    D = len(rows) // C
    con = data[:, 3:].reshape(C, D, -1)
    unc = unconstrain(con) if unconstrain is not None else con.copy()
    return PosteriorDraws(header[3:], unc, con, data[:, 2].reshape(C, D), np.zeros(C, dtype=int))


def diagnostics_to_json(diag: Diagnostics, path=None, extra=None):
    payload = dict(extra or {})
    payload["diagnostics"] = diag.to_dict()
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
