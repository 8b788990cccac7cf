"""Command-line interface: ``hmev <command> [options]``.

Commands: config, simulate, ingest, fit, predict, validate, benchmark.
Settings come from built-in defaults, an optional ``--config`` file (INI
sections, see ``hmev config --dump``) and command-line flags, in that order.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 sampler or convergence failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, ingest, metrics, pipeline, predictive, synth
from .models import Dataset, ModelError, ModelOptions
from .rng import stream
from .sampler import SamplerConfig, SamplerError, diagnostics_to_json, draws_from_csv, draws_to_csv

log = logging.getLogger("hmev")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class ConvergenceError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunSection:
    seed: int = 0
    workers: int = 1


@dataclass
class SplitSection:
    mode: str = "first"
    m_train: int = 0  # 0: no split
    m_test: int = 0  # 0: every remaining block
    replicate: int = 0


@dataclass
class ModelSection:
    threshold_quantile: float = 0.95


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    scenario: synth.ScenarioSpec = field(default_factory=synth.ScenarioSpec)
    models: ModelSection = field(default_factory=ModelSection)
    predict: pipeline.PredictConfig = field(default_factory=pipeline.PredictConfig)
    metrics: pipeline.MetricConfig = field(default_factory=pipeline.MetricConfig)
    qc: ingest.QcConfig = field(default_factory=ingest.QcConfig)
    decluster: ingest.DeclusterConfig = field(default_factory=ingest.DeclusterConfig)
    split: SplitSection = field(default_factory=SplitSection)
    benchmark: pipeline.BenchmarkConfig = field(default_factory=pipeline.BenchmarkConfig)


# keys that live in [run] rather than in their own section
_SHADOWED = {"sampler": ("seed", "workers"), "scenario": ("seed",)}

PRESETS = {
    "default": {},
    "desk": {"sampler": {"chains": 4, "iterations": 1000},
             "scenario": {"replicates": 10},
             "benchmark": {"replicates": 10, "m_train": "20,50"}},
    "paper": {"sampler": {"chains": 4, "iterations": 2000},
              "scenario": {"replicates": 100},
              "benchmark": {"replicates": 100, "m_train": "20,50"}},
}


def _section_items(cfg: RunConfig):
    for f in fields(RunConfig):
        obj = getattr(cfg, f.name)
        skip = _SHADOWED.get(f.name, ())
        yield f.name, {k: v for k, v in asdict(obj).items() if k not in skip}


def _coerce(default, raw, key):
    try:
        if isinstance(default, bool):
            if str(raw).lower() in ("1", "true", "yes", "on"):
                return True
            if str(raw).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if default is None:
            return None if str(raw).strip() in ("", "none", "None") else int(raw)
        return type(default)(raw)
    except (TypeError, ValueError):
        raise UsageError(f"bad value {raw!r} for {key}") from None


def _update(obj, values, section):
    cur = asdict(obj)
    new = {}
    for k, raw in values.items():
        if k not in cur or k in _SHADOWED.get(section, ()):
            raise UsageError(f"unknown key {k!r} in section [{section}]")
        new[k] = _coerce(cur[k], raw, f"{section}.{k}")
    try:
        return replace(obj, **new)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"[{section}]: {exc}") from None


def apply_overrides(cfg: RunConfig, overrides: dict):
    for section, values in overrides.items():
        if section not in {f.name for f in fields(RunConfig)}:
            raise UsageError(f"unknown config section [{section}]")
        cfg = replace(cfg, **{section: _update(getattr(cfg, section), values, section)})
    return cfg


def load_config(path=None, preset="default"):
    cfg = RunConfig()
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = apply_overrides(cfg, PRESETS[preset])
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"config file {path} not found")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise UsageError(f"cannot parse {path}: {exc}") from None
        cfg = apply_overrides(cfg, {s: dict(cp[s]) for s in cp.sections()})
    return cfg


def dump_config(cfg: RunConfig):
    cp = configparser.ConfigParser(interpolation=None)
    for name, values in _section_items(cfg):
        cp[name] = {k: ("" if v is None else repr(v) if isinstance(v, float) else str(v))
                    for k, v in values.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: RunConfig):
    # the worker count does not change results, so it stays out of the hash
    fixed = replace(cfg, run=replace(cfg.run, workers=1))
    return hashlib.sha256(dump_config(fixed).encode()).hexdigest()[:16]


def effective(cfg: RunConfig):
    """Sampler and scenario configs with the run-level seed and workers applied."""
    sampler = replace(cfg.sampler, seed=cfg.run.seed, workers=cfg.run.workers)
    scenario = replace(cfg.scenario, seed=cfg.run.seed)
    return sampler, scenario


def metadata(cfg: RunConfig, command, **extra):
    lines = [f"hmev_version={__version__}", f"command={command}", f"config_hash={config_hash(cfg)}",
             f"seed={cfg.run.seed}"]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return lines


def read_metadata(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_dataset(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"dataset {path} not found")
    try:
        return Dataset.from_csv(p)
    except (ModelError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# commands


def cmd_config(args, cfg):
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def cmd_simulate(args, cfg):
    _, spec = effective(cfg)
    families = [f.strip() for f in (args.families or spec.family).split(",") if f.strip()]
    out = Path(args.out)
    written = []
    for fam in families:
        try:
            s = spec.with_family(fam)
        except synth.ScenarioError as exc:
            raise UsageError(str(exc)) from None
        written += synth.write_scenario(s, out, metadata(cfg, "simulate"))
    log.info("wrote %d files to %s", len(written), out)
    return EXIT_OK


def _read_record(path, fmt):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input {path} not found")
    if fmt == "auto":
        fmt = "csv" if p.suffix.lower() == ".csv" else "dly"
    try:
        if fmt == "csv":
            return ingest.read_csv_record(p, station_id=p.stem)
        return ingest.parse_station_file(p)
    except ingest.IngestError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_ingest(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for path in args.inputs:
        rec = _read_record(path, args.format)
        data, report = ingest.process_station(rec, cfg.qc, cfg.decluster)
        sid = rec.station_id
        _write_json(out / f"{sid}_qc.json", report)
        summary[sid] = report["accepted"]
        if data is None:
            log.warning("station %s rejected: %s", sid, report["reason"])
            continue
        meta = metadata(cfg, "ingest", station=sid, tau=report["tau"])
        data.to_csv(out / f"{sid}.csv", meta)
        sp = cfg.split
        if sp.m_train:
            rng = stream(cfg.run.seed, "split", sid, sp.replicate)
            try:
                train, test = ingest.split_train_test(data, sp.m_train, sp.m_test or None, sp.mode, rng)
            except ingest.IngestError as exc:
                raise DataError(f"{sid}: {exc}") from None
            train.to_csv(out / f"{sid}_train.csv", meta + [f"split={sp.mode}", "half=train"])
            test.to_csv(out / f"{sid}_test.csv", meta + [f"split={sp.mode}", "half=test"])
    _write_json(out / "ingest_summary.json", summary)
    return EXIT_OK


def cmd_fit(args, cfg):
    data = _load_dataset(args.data)
    sampler, _ = effective(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for name in _model_names(args.model):
        try:
            fitted = pipeline.fit_model(name, data, sampler, ModelOptions(cfg.models.threshold_quantile))
        except SamplerError as exc:
            _write_json(out / f"{name}_diagnostics.json",
                        {"model": name, "error": str(exc), "config_hash": config_hash(cfg)})
            raise ConvergenceError(f"{name}: {exc}") from None
        except ModelError as exc:
            raise DataError(f"{name}: {exc}") from None
        extra = {"model": name, "data": Path(args.data).name, "block_size": data.block_size,
                 "n_blocks": data.J}
        if fitted.threshold is not None:
            extra["threshold"] = repr(fitted.threshold)
        draws_to_csv(fitted.draws, out / f"{name}_draws.csv", metadata(cfg, "fit", **extra))
        diag = fitted.diagnostics
        diagnostics_to_json(diag, out / f"{name}_diagnostics.json",
                            {**extra, "config_hash": config_hash(cfg), "seed": cfg.run.seed,
                             "hmev_version": __version__, "converged": fitted.converged})
        log.info("%s: max R-hat %.4f, min ESS %.0f, %d divergences", name, diag.max_rhat,
                 diag.min_ess, diag.divergences)
        if not fitted.converged:
            log.error("%s: R-hat %.4f exceeds %.2f", name, diag.max_rhat, pipeline.RHAT_LIMIT)
            status = EXIT_CONVERGENCE
    return status


def _model_names(spec):
    names = [m.strip() for m in spec.split(",") if m.strip()]
    for m in names:
        if m not in ("hmev", "gev", "pot"):
            raise UsageError(f"unknown model {m!r}")
    return names


def _law_from_file(path, cfg):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"draws file {path} not found")
    meta = read_metadata(p)
    name = meta.get("model")
    if name not in ("hmev", "gev", "pot"):
        raise DataError(f"{path}: no model recorded in the file header")
    try:
        draws = draws_from_csv(p)
        thr = float(meta["threshold"]) if "threshold" in meta else None
        fitted = pipeline.FittedModel(name, None, draws, None, thr, int(meta.get("block_size", 366)))
        law = pipeline.predictive_law(fitted, cfg.run.seed, cfg.predict)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return name, meta, draws, law


def _thin(B, k):
    return np.unique(np.linspace(0, B - 1, min(B, k)).round().astype(int))


def cmd_predict(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.draws:
        name, meta, draws, law = _law_from_file(path, cfg)
        curve = predictive.quantile_curve(law, cfg.predict.return_times(), cfg.predict.level)
        extra = {"model": name, "draws": Path(path).name, "future_blocks": cfg.predict.future_blocks}
        predictive.curves_to_csv([curve], out / f"{name}_curve.csv", metadata(cfg, "predict", **extra))
        idx = _thin(draws.B, cfg.predict.check_draws)
        reps = predictive.simulate_predictive(
            name, draws.matrix()[idx], draws.names, int(meta.get("n_blocks", 1)),
            stream(cfg.run.seed, "checks", name), int(meta.get("block_size", 366)),
            float(meta["threshold"]) if "threshold" in meta else None)
        reps.to_csv(out / f"{name}_checks.csv", metadata(cfg, "predict", **extra))
    return EXIT_OK


def cmd_validate(args, cfg):
    train = _load_dataset(args.train)
    test = _load_dataset(args.test)
    dataset = args.dataset or Path(args.train).stem
    reports = []
    for path in args.draws:
        name, meta, draws, law = _law_from_file(path, cfg)
        try:
            rep = pipeline.score(law, train, test, cfg.metrics, model=name, dataset=dataset,
                                 m_train=train.J, seed=cfg.run.seed)
        except metrics.MetricsError as exc:
            raise DataError(f"{path}: {exc}") from None
        if not rep.lpml <= rep.lppd_in:
            raise DataError(f"{path}: lpml {rep.lpml} exceeds lppd {rep.lppd_in}")
        reports.append(rep)
    ledger = Path(args.ledger)
    metrics.append_ledger(ledger, reports, metadata(cfg, "validate"))
    rows = metrics.read_ledger(ledger)
    tally = {"fse": metrics.best_model_tally(rows, "fse"),
             "width90": metrics.best_model_tally(rows, "width90"),
             "lppd_out": metrics.best_model_tally(rows, "lppd_out", lower_is_better=False)}
    _write_json(ledger.with_suffix(".tally.json"), tally)
    for r in reports:
        print(f"{r.model:5s} fse={r.fse:.4f} bias={r.bias:+.4f} width90={r.width90:.3f} "
              f"lppd_in={r.lppd_in:.3f} lppd_out={r.lppd_out:.3f} lpml={r.lpml:.3f} p_eff={r.p_eff:.3f}")
    return EXIT_OK


def cmd_benchmark(args, cfg):
    sampler, spec = effective(cfg)
    out = Path(args.out)

    def progress(row):
        log.info("%s %s", row["cell"], row["status"])

    try:
        rows, ran = pipeline.run_benchmark(out, cfg.benchmark, spec, replace(sampler, workers=1),
                                           cfg.predict, cfg.metrics, cfg.run.seed, cfg.run.workers,
                                           config_hash(cfg), progress)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta = metadata(cfg, "benchmark")
    ok = [r for r in rows if r.get("status") == "ok"]
    cols = ["cell", "family", "m_train", "replicate", "model", "status"] + metrics.REPORT_COLUMNS[4:] + [
        "max_rhat", "divergences"]
    _write_rows(out / "ledger.csv", rows, cols, meta)
    summary = pipeline.summarize(rows)
    _write_rows(out / "summary.csv", summary, ["family", "m_train", "model", "metric", "n", "median",
                                                "q25", "q75"], meta)
    failed = len(rows) - len(ok)
    log.info("%d cells (%d run now, %d failed)", len(rows), ran, failed)
    return EXIT_OK


def _write_rows(path, rows, cols, header_lines):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
    Path(path).write_text(buf.getvalue())


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="hmev", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hmev {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with settings (see `hmev config --dump`)")
    common.add_argument("--preset", default="default", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int,
                        help="worker count (default: HMEV_WORKERS or 1)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one setting; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("config", parents=[common], help="print the effective configuration")
    c.add_argument("--dump", action="store_true", help="print every setting with its value")
    c.set_defaults(func=cmd_config)

    s = sub.add_parser("simulate", parents=[common], help="write synthetic train/test datasets")
    s.add_argument("--out", required=True)
    s.add_argument("--families", help="comma-separated scenario families (default: scenario.family)")
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("ingest", parents=[common], help="parse, QC and decluster station files")
    i.add_argument("inputs", nargs="+")
    i.add_argument("--format", choices=("auto", "dly", "csv"), default="auto")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_ingest)

    f = sub.add_parser("fit", parents=[common], help="sample the posterior of one or more models")
    f.add_argument("--data", required=True)
    f.add_argument("--model", default="hmev", help="hmev, gev, pot or a comma-separated list")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", parents=[common], help="return-level curves and predictive checks")
    r.add_argument("--draws", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    v = sub.add_parser("validate", parents=[common], help="score fitted models on train/test maxima")
    v.add_argument("--draws", nargs="+", required=True)
    v.add_argument("--train", required=True)
    v.add_argument("--test", required=True)
    v.add_argument("--ledger", required=True)
    v.add_argument("--dataset", help="dataset label in the ledger (default: train file stem)")
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("benchmark", parents=[common], help="run the simulation study matrix")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_benchmark)
    return p


def _parse_sets(items):
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out.setdefault(section.strip(), {})[name.strip()] = value.strip()
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.preset)
        run = {}
        if args.seed is not None:
            run["seed"] = args.seed
        workers = args.workers if args.workers is not None else os.environ.get("HMEV_WORKERS")
        if workers is not None:
            run["workers"] = workers
        overrides = _parse_sets(args.set)
        if run:
            overrides.setdefault("run", {}).update(run)
        cfg = apply_overrides(cfg, overrides)
        if cfg.run.workers < 1:
            raise UsageError("workers must be at least 1")
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"hmev {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"hmev {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"hmev {args.command}: sampler failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
