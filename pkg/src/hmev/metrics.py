"""Predictive-accuracy metrics computed from per-draw quantities.

All quantile-based metrics take a (B, M) matrix ``q`` whose column j holds
the B per-draw levels at the plotting-position probability of maximum j,
so the same matrix feeds :func:`fse` and :func:`bias_and_width`.
Density-based metrics take a (B, M) matrix of per-draw densities of the
observed maxima.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

DEFAULT_MIN_RETURN_TIME = 2.0


class MetricsError(ValueError):
    """A metric is undefined for the given inputs."""


@dataclass
class MaximaSample:
    """Block maxima with Weibull plotting positions rank/(M+1)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size == 0:
            raise MetricsError("no maxima")

    @property
    def M(self):
        return self.values.size

    @property
    def ranks(self):
        # 1..M over ascending order; ties keep input order
        r = np.empty(self.M, dtype=np.int64)
        r[np.argsort(self.values, kind="stable")] = np.arange(1, self.M + 1)
        return r

    @property
    def probabilities(self):
        return self.ranks / (self.M + 1.0)

    @property
    def return_times(self):
        return 1.0 / (1.0 - self.probabilities)

    def qualifying(self, min_return_time=DEFAULT_MIN_RETURN_TIME):
        """Boolean mask of maxima whose empirical return time exceeds the cutoff."""
        return self.return_times > min_return_time


def plotting_positions(maxima):
    return MaximaSample(maxima).probabilities


def _select(q, maxima, min_return_time):
    sample = maxima if isinstance(maxima, MaximaSample) else MaximaSample(maxima)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[1] != sample.M:
        raise MetricsError(f"quantile matrix has {q.shape[1]} columns for {sample.M} maxima")
    keep = sample.qualifying(min_return_time)
    if not keep.any():
        raise MetricsError(f"no maxima with empirical return time above {min_return_time}")
    y = sample.values[keep]
    if np.any(y <= 0):
        raise MetricsError("relative errors need positive maxima")
    return q[:, keep], y


def fse(q, maxima, min_return_time=DEFAULT_MIN_RETURN_TIME):
    """Fractional square error: mean over qualifying maxima of the root mean
    square (over draws) relative error of the per-draw quantile."""
    qs, y = _select(q, maxima, min_return_time)
    rel = (qs - y) / y
    return float(np.mean(np.sqrt(np.mean(rel**2, axis=0))))


def bias_and_width(q, maxima, min_return_time=DEFAULT_MIN_RETURN_TIME, level=0.90):
    """(mean signed relative error, mean width of the central credible interval)."""
    qs, y = _select(q, maxima, min_return_time)
    bias = float(np.mean((qs - y) / y))
    alpha = (1.0 - level) / 2.0
    width = np.quantile(qs, 1.0 - alpha, axis=0) - np.quantile(qs, alpha, axis=0)
    return bias, float(np.mean(width))


def _log_density_matrix(dens):
    dens = np.atleast_2d(np.asarray(dens, dtype=float))
    if np.any(dens < 0) or np.any(~np.isfinite(dens)):
        raise MetricsError("densities must be finite and nonnegative")
    with np.errstate(divide="ignore"):
        return np.log(dens)


def lppd(dens):
    """Sum over maxima of log(mean over draws of the density)."""
    ld = _log_density_matrix(dens)
    per_point = logsumexp(ld, axis=0) - np.log(ld.shape[0])
    if np.any(np.isneginf(per_point)):
        warnings.warn("some maxima have zero density under every draw; lppd = -inf", RuntimeWarning)
    return float(np.sum(per_point))


def log_cpo(dens):
    """Per-maximum log conditional predictive ordinate (harmonic mean of the
    per-draw densities), computed in log space."""
    ld = _log_density_matrix(dens)
    if np.any(np.isneginf(ld)):
        warnings.warn("zero per-draw density; the affected CPO is 0", RuntimeWarning)
    B = ld.shape[0]
    with np.errstate(invalid="ignore"):
        out = np.log(B) - logsumexp(-ld, axis=0)
    return np.where(np.any(np.isneginf(ld), axis=0), -np.inf, out)


def lpml(dens):
    return float(np.sum(log_cpo(dens)))


def effective_params(lppd_in, lpml_in):
    return float(lppd_in - lpml_in)


@dataclass
class MetricsReport:
    model: str
    dataset: str
    m_train: int
    seed: int
    fse: float
    bias: float
    width90: float
    lppd_in: float
    lppd_out: float
    lpml: float
    p_eff: float = field(init=False)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p_eff = effective_params(self.lppd_in, self.lpml)

    def row(self):
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return d


REPORT_COLUMNS = [f.name for f in fields(MetricsReport) if f.name != "extra"]


def evaluate(q_test, test_maxima, dens_train, dens_test, *, model, dataset, m_train, seed,
             min_return_time=DEFAULT_MIN_RETURN_TIME, level=0.90, extra=None):
    """All metrics for one (model, dataset) pair.

    ``q_test`` holds per-draw levels at the test plotting positions,
    ``dens_train``/``dens_test`` per-draw densities of train/test maxima.
    """
    b, w = bias_and_width(q_test, test_maxima, min_return_time, level)
    return MetricsReport(model, dataset, int(m_train), int(seed),
                         fse(q_test, test_maxima, min_return_time), b, w,
                         lppd(dens_train), lppd(dens_test), lpml(dens_train), dict(extra or {}))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_ledger(path, reports, header_lines=()):
    """Append report rows to a CSV ledger, writing header lines on creation."""
    path = Path(path)
    rows = [r.row() for r in reports]
    if not rows:
        return
    columns = list(rows[0])
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        if new:
            for line in header_lines:
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_ledger(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(lines))


def best_model_tally(rows, metric, lower_is_better=True, group_key="dataset"):
    """Fraction of groups in which each model attains the best ``metric``."""
    groups = {}
    for r in rows:
        groups.setdefault(r[group_key], []).append(r)
    wins = {}
    for members in groups.values():
        vals = [(float(r[metric]), r["model"]) for r in members]
        best = min(vals) if lower_is_better else max(vals)
        wins[best[1]] = wins.get(best[1], 0) + 1
    total = len(groups)
    return {m: c / total for m, c in sorted(wins.items())}


def summary_json(rows, path=None, metrics=("fse", "bias", "width90", "lppd_out", "p_eff")):
    """Median and quartiles of each metric per model."""
    out = {}
    for model in sorted({r["model"] for r in rows}):
        sel = [r for r in rows if r["model"] == model]
        out[model] = {}
        for m in metrics:
            v = np.array([float(r[m]) for r in sel])
            v = v[np.isfinite(v)]
            out[model][m] = ({"median": float(np.median(v)), "q25": float(np.quantile(v, 0.25)),
                              "q75": float(np.quantile(v, 0.75)), "n": int(v.size)}
                             if v.size else {"n": 0})
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return out
