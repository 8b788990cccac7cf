"""Fit -> predict -> score, for one dataset or a whole benchmark matrix.

Randomness is keyed by explicit seeds: the sampler uses the fit seed, the
hierarchical predictive blocks use ``stream(seed, "predictive", model)``, and
every benchmark cell derives its seeds from (master seed, family, M_train,
replicate, model), so results do not depend on execution order or worker
count.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import metrics, predictive, synth
from .models import MODEL_NAMES, Dataset, ModelOptions, PotModel, build_model
from .rng import derive_seed, stream
from .sampler import SamplerConfig, SamplerError, fit

log = logging.getLogger(__name__)

RHAT_LIMIT = 1.05


@dataclass
class PredictConfig:
    future_blocks: int = predictive.DEFAULT_FUTURE_BLOCKS
    t_min: float = 1.05
    t_max: float = 500.0
    t_points: int = 60
    level: float = 0.90
    check_draws: int = 200

    def __post_init__(self):
        if self.future_blocks < 1 or self.t_points < 2 or self.check_draws < 1:
            raise ValueError("future_blocks, check_draws must be >= 1 and t_points >= 2")
        if not 1 < self.t_min < self.t_max:
            raise ValueError("need 1 < t_min < t_max")
        if not 0 < self.level < 1:
            raise ValueError("credible level must lie in (0, 1)")

    def return_times(self):
        return np.geomspace(self.t_min, self.t_max, self.t_points)


@dataclass
class MetricConfig:
    min_return_time: float = metrics.DEFAULT_MIN_RETURN_TIME
    level: float = 0.90


@dataclass
class FittedModel:
    name: str
    model: object
    draws: object
    diagnostics: object
    threshold: float | None = None
    block_size: int = 366

    @property
    def converged(self):
        return self.diagnostics.max_rhat <= RHAT_LIMIT


def fit_model(name, train: Dataset, sampler: SamplerConfig, options: ModelOptions | None = None):
    model = build_model(name, train, options)
    draws, diag = fit(model, sampler)
    thr = model.threshold if isinstance(model, PotModel) else None
    return FittedModel(name, model, draws, diag, thr, train.block_size)


def predictive_law(fitted: FittedModel, seed, cfg: PredictConfig | None = None):
    cfg = cfg or PredictConfig()
    return predictive.law_from_draws(
        fitted.name, fitted.draws.matrix(), fitted.draws.names,
        rng=stream(seed, "predictive", fitted.name), block_size=fitted.block_size,
        future_blocks=cfg.future_blocks, threshold=fitted.threshold)


def score(law, train: Dataset, test: Dataset, cfg: MetricConfig | None = None, **meta):
    """MetricsReport for one fitted law: quantile metrics on the test maxima,
    lppd on train and test maxima, lpml on the train maxima."""
    cfg = cfg or MetricConfig()
    sample = metrics.MaximaSample(test.maxima)
    # only maxima above the return-time cutoff enter the quantile metrics
    keep = sample.qualifying(cfg.min_return_time)
    q_test = np.full((law.B, sample.M), np.nan)
    q_test[:, keep] = law.quantiles(sample.probabilities[keep])
    return metrics.evaluate(q_test, sample, law.pdf(train.maxima), law.pdf(test.maxima),
                            min_return_time=cfg.min_return_time, level=cfg.level, **meta)


# --------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkConfig:
    families: str = "WEI,GAM,WEI_G,GP"
    m_train: str = "20,50"
    replicates: int = 10
    models: str = ",".join(MODEL_NAMES)
    threshold_quantile: float = 0.95

    def family_list(self):
        out = [f.strip() for f in self.families.split(",") if f.strip()]
        for f in out:
            if f not in synth.FAMILIES:
                raise ValueError(f"unknown family {f!r}")
        return out

    def m_train_list(self):
        return [int(m) for m in str(self.m_train).split(",") if m.strip()]

    def model_list(self):
        out = [m.strip() for m in self.models.split(",") if m.strip()]
        for m in out:
            if m not in MODEL_NAMES:
                raise ValueError(f"unknown model {m!r}")
        return out

    def cells(self):
        return [(f, m, r, name) for f in self.family_list() for m in self.m_train_list()
                for r in range(self.replicates) for name in self.model_list()]


def cell_id(cell):
    f, m, r, name = cell
    return f"{f}_m{m:03d}_r{r:03d}_{name}"


@dataclass
class CellTask:
    cell: tuple
    spec: dict
    sampler: dict
    predict: dict
    metric: dict
    threshold_quantile: float
    seed: int


def run_cell(task: CellTask):
    """Generate the cell's data, fit, predict and score. Never raises: failures
    come back as a row with ``status`` set."""
    family, m_train, r, name = task.cell
    row = {"cell": cell_id(task.cell), "family": family, "m_train": m_train, "replicate": r,
           "model": name}
    try:
        spec = synth.ScenarioSpec(**{**task.spec, "family": family, "m_train": m_train,
                                     "seed": task.seed})
        train, test = synth.generate_scenario(spec, r)
        cell_seed = derive_seed(task.seed, family, m_train, r, name)
        sampler = SamplerConfig(**{**task.sampler, "seed": cell_seed})
        fitted = fit_model(name, train, sampler, ModelOptions(task.threshold_quantile))
        law = predictive_law(fitted, cell_seed, PredictConfig(**task.predict))
        rep = score(law, train, test, MetricConfig(**task.metric), model=name,
                    dataset=f"{family}_r{r:03d}", m_train=m_train, seed=cell_seed,
                    extra={"max_rhat": fitted.diagnostics.max_rhat,
                           "divergences": fitted.diagnostics.divergences})
        row.update(rep.row())
        row["status"] = "ok"
    except (SamplerError, ValueError, FloatingPointError) as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run_benchmark(outdir, bench: BenchmarkConfig, spec: synth.ScenarioSpec, sampler: SamplerConfig,
                  predict_cfg: PredictConfig, metric_cfg: MetricConfig, seed, workers=1,
                  config_hash="", progress=None):
    """Run every missing cell, then rebuild the ledger and summary from all cells.

    Completed cells live in ``outdir/cells/<id>.json``; a rerun skips them.
    """
    outdir = Path(outdir)
    cells_dir = outdir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    manifest = outdir / "manifest.json"
    cells = bench.cells()
    if manifest.exists():
        old = json.loads(manifest.read_text())
        if old.get("config_hash") != config_hash:
            raise ValueError(f"{outdir} holds a benchmark with a different configuration "
                             f"({old.get('config_hash')}); use a fresh directory")
    manifest.write_text(json.dumps({"config_hash": config_hash, "seed": seed,
                                    "cells": [cell_id(c) for c in cells]}, indent=2) + "\n")
    todo = [c for c in cells if not (cells_dir / f"{cell_id(c)}.json").exists()]
    tasks = [CellTask(c, {k: v for k, v in asdict(spec).items() if k not in ("family", "m_train", "seed")},
                      {k: v for k, v in asdict(sampler).items() if k != "seed"},
                      asdict(predict_cfg), asdict(metric_cfg), bench.threshold_quantile, seed)
             for c in todo]

    def store(row):
        path = cells_dir / f"{row['cell']}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(_json_safe(row), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
        if progress:
            progress(row)

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(run_cell, tasks):
                store(row)
    else:
        for t in tasks:
            store(run_cell(t))
    rows = [json.loads((cells_dir / f"{cell_id(c)}.json").read_text()) for c in cells]
    return rows, len(todo)


SUMMARY_METRICS = ("fse", "bias", "width90", "lppd_in", "lppd_out", "lpml", "p_eff")


def summarize(rows):
    """Median and quartiles of each metric per (family, M_train, model)."""
    out = []
    keys = sorted({(r["family"], int(r["m_train"]), r["model"]) for r in rows})
    for fam, m, model in keys:
        sel = [r for r in rows if r["family"] == fam and int(r["m_train"]) == m
               and r["model"] == model and r.get("status") == "ok"]
        for metric in SUMMARY_METRICS:
            v = np.array([float(r[metric]) for r in sel]) if sel else np.zeros(0)
            v = v[np.isfinite(v)]
            out.append({"family": fam, "m_train": m, "model": model, "metric": metric,
                        "n": int(v.size),
                        "median": float(np.median(v)) if v.size else float("nan"),
                        "q25": float(np.quantile(v, 0.25)) if v.size else float("nan"),
                        "q75": float(np.quantile(v, 0.75)) if v.size else float("nan")})
    return out


def pairwise_wins(rows, metric, family, m_train, model, lower_is_better=True):
    """Replicates in which ``model`` beats every other model on ``metric``."""
    by_rep = {}
    for r in rows:
        if r["family"] == family and int(r["m_train"]) == m_train and r.get("status") == "ok":
            by_rep.setdefault(int(r["replicate"]), {})[r["model"]] = float(r[metric])
    wins = total = 0
    for vals in by_rep.values():
        if model not in vals or len(vals) < 2:
            continue
        total += 1
        mine = vals.pop(model)
        best_other = min(vals.values()) if lower_is_better else max(vals.values())
        wins += mine < best_other if lower_is_better else mine > best_other
    return wins, total


__all__ = ["PredictConfig", "MetricConfig", "FittedModel", "fit_model", "predictive_law", "score",
           "BenchmarkConfig", "cell_id", "run_cell", "run_benchmark", "summarize", "pairwise_wins",
           "RHAT_LIMIT"]
