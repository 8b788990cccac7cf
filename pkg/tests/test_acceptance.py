"""Acceptance criteria 1-10, each reported as one PASS/FAIL line at the end of
the run. The study-scale criteria (4, 6, 9) take minutes; run just this file
with ``pytest tests/test_acceptance.py -v``."""
import time
import warnings

import numpy as np
from scipy import integrate

from hmev import cli, dist, ingest, metrics, models, pipeline, predictive, sampler, synth
from hmev.sampler import SamplerConfig

from .helpers import relative_error
from .oracles import logpost, metric_loops
from .test_ingest import scan_events
from .test_models import _finite_points, _gev_oracle, _hmev_oracle, _pot_oracle

WEI_G_HYPERS = (9.0, 2.25, 0.7, 0.035)
HYPER_NAMES = ("mu_delta", "sigma_delta", "mu_gamma", "sigma_gamma")


def test_gradients(criterion):
    record = criterion(1, "analytic gradients vs finite differences")
    t0 = time.perf_counter()
    data = synth.generate_scenario(synth.ScenarioSpec(family="WEI_G", m_train=20), 0)[0]
    cases = [("hmev", models.HmevModel(data), _hmev_oracle, 0.3),
             ("gev", models.GevModel(data.maxima), _gev_oracle, 0.5),
             ("pot", models.build_model("pot", data), _pot_oracle, 0.5)]
    worst = {}
    for name, m, oracle, jitter in cases:
        errs = []
        for v in _finite_points(m, np.random.default_rng(2024), 100, jitter):
            fd = logpost.gradient(lambda u: oracle(m, u), v)
            errs.append(relative_error(m.log_density(v)[1], fd))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-6 for e in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.0f} s"
    assert record(ok, detail), detail


def _continuous_cases():
    # (distribution, lower support end, upper support end)
    inf = np.inf
    return [(dist.Weibull(0.7, 9.0), 0, inf), (dist.Weibull(2.5, 3.0), 0, inf), (dist.Gumbel(30.0, 8.0), -inf, inf),
            (dist.TruncatedGumbel(0.7, 0.035), 0, inf), (dist.TruncatedGumbel(-2.0, 0.5), 0, inf),
            (dist.TruncatedGumbel(9.0, 2.25), 0, inf), (dist.GEV(40.0, 12.0, 0.15), -40.0, inf),
            (dist.GEV(40.0, 12.0, 0.0), -inf, inf), (dist.GEV(40.0, 12.0, -0.2), -inf, 100.0),
            (dist.GPD(10.0, 5.0, 0.114), 10.0, inf), (dist.GPD(10.0, 5.0, 0.0), 10.0, inf),
            (dist.GPD(10.0, 5.0, -0.3), 10.0, 10.0 + 5.0 / 0.3), (dist.Normal(1.0, 2.0), -inf, inf),
            (dist.HalfNormal(3.0), 0, inf), (dist.Gamma(0.8, 11.0), 0, inf), (dist.InvGamma(5.0, 36.0), 0, inf),
            (dist.Beta(2.0, 2.0), 0, 1), (dist.Beta(0.7, 3.0), 0, 1)]


def _integral(d, lo, hi):
    cuts = [float(d.quantile(p)) for p in (0.01, 0.5, 0.99)]
    pdf = lambda x: float(np.exp(d.logpdf(x)))  # noqa: E731
    edges = [lo] + cuts + [hi]
    return sum(integrate.quad(pdf, a, b, limit=200, epsabs=1e-12, epsrel=1e-12)[0]
               for a, b in zip(edges[:-1], edges[1:]))


def test_distribution_kernel(criterion):
    record = criterion(2, "round trips, normalisation, GEV shape-to-zero limit")
    p = np.concatenate([[1e-10, 1e-6, 1e-3], np.linspace(0.01, 0.99, 99), [1 - 1e-3, 1 - 1e-6]])
    trip = 0.0
    norm = 0.0
    for d, lo, hi in _continuous_cases():
        q = d.quantile(p)
        trip = max(trip, float(np.max(np.abs(d.cdf(q) - p))))
        x = q[(p > 1e-6) & (p < 1 - 1e-6)]
        trip = max(trip, relative_error(d.quantile(d.cdf(x)), x, floor=1e-300))
        norm = max(norm, abs(_integral(d, lo, hi) - 1.0))
    ys = np.linspace(5.0, 150.0, 60)
    gum = dist.Gumbel(40.0, 12.0)
    limit = 0.0
    for xi in (1e-8, -1e-8, 1e-10, -1e-12, 0.0):
        g = dist.GEV(40.0, 12.0, xi)
        limit = max(limit, float(np.max(np.abs(g.cdf(ys) - gum.cdf(ys)))),
                    float(np.max(np.abs(np.exp(g.logpdf(ys)) - np.exp(gum.logpdf(ys))))),
                    relative_error(g.quantile(p[3:-2]), gum.quantile(p[3:-2])))
    ok = trip < 1e-8 and norm < 1e-5 and limit < 1e-6
    detail = f"round trip {trip:.1e}, |integral - 1| {norm:.1e}, GEV limit {limit:.1e}"
    assert record(ok, detail), detail


def test_linearization(criterion):
    record = criterion(3, "exact vs linearized block-maximum cdf")
    rate = 100 / 366
    probs = (0.99, 0.995, 0.999, 0.9995, 0.9999)
    diffs = []
    for p in probs:
        y = predictive.exact_quantile(p, WEI_G_HYPERS, rate)
        diffs.append(abs(predictive.exact_cdf(y, WEI_G_HYPERS, rate)
                         - predictive.linearized_cdf(y, WEI_G_HYPERS, rate)))
    at_999 = diffs[probs.index(0.999)]
    decreasing = all(a > b for a, b in zip(diffs[:-1], diffs[1:]))
    ok = at_999 < 5e-3 and decreasing
    detail = "abs diff " + ", ".join(f"{p}: {d:.2e}" for p, d in zip(probs, diffs))
    assert record(ok, detail), detail


def test_posterior_recovery(criterion):
    record = criterion(4, "hyperparameter recovery over 20 seeded J=50 fits")
    t0 = time.perf_counter()
    rate = 100 / 366
    truth = dict(zip(HYPER_NAMES, WEI_G_HYPERS))
    covered = total = 0
    per_name = dict.fromkeys(HYPER_NAMES, 0)
    max_rhat, divergences = 0.0, 0
    for s in range(20):
        data = models.hmev_generate(WEI_G_HYPERS, rate, 366, 50, np.random.default_rng(1000 + s))
        draws, diag = sampler.fit(models.HmevModel(data), SamplerConfig(seed=s))
        max_rhat = max(max_rhat, diag.max_rhat)
        divergences += diag.divergences
        for name, value in truth.items():
            lo, hi = np.quantile(draws.column(name), [0.05, 0.95])
            hit = lo <= value <= hi
            covered += hit
            per_name[name] += hit
            total += 1
    elapsed = time.perf_counter() - t0
    coverage = covered / total
    ok = coverage >= 0.8 and max_rhat < 1.05 and divergences == 0 and elapsed < 1800
    detail = (f"coverage {covered}/{total} ({coverage:.0%}; "
              + ", ".join(f"{k} {v}/20" for k, v in per_name.items())
              + f"), max R-hat {max_rhat:.3f}, {divergences} divergences, {elapsed / 60:.1f} min")
    assert record(ok, detail), detail


def test_metric_oracles(criterion):
    record = criterion(5, "metrics vs brute-force loops; lpml <= lppd_in")
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        B, M = int(rng.integers(1, 40)), int(rng.integers(3, 60))
        y = rng.gamma(3.0, 15.0, M)
        q = y * rng.lognormal(0.0, 0.25, (B, M))
        dens = rng.lognormal(-5, 1.5, (B, M))
        b, w = metrics.bias_and_width(q, y)
        bl, wl = metric_loops.bias_and_width(q.tolist(), y.tolist())
        pairs = [(metrics.fse(q, y), metric_loops.fse(q.tolist(), y.tolist())), (b, bl), (w, wl),
                 (metrics.lppd(dens), metric_loops.lppd(dens.tolist())),
                 (metrics.lpml(dens), metric_loops.lpml(dens.tolist()))]
        worst = max(worst, max(abs(a - o) / max(abs(o), 1e-300) for a, o in pairs))
    # every model fitted on a few scenario datasets
    jensen_ok = True
    n_fits = 0
    for fam in ("WEI", "GP"):
        train, test = synth.generate_scenario(synth.ScenarioSpec(family=fam, m_train=20, m_test=50), 0)
        for name in models.MODEL_NAMES:
            fitted = pipeline.fit_model(name, train, SamplerConfig(chains=2, iterations=500, seed=1))
            rep = pipeline.score(pipeline.predictive_law(fitted, 1), train, test, model=name, dataset=fam,
                                 m_train=20, seed=1)
            jensen_ok &= rep.lpml <= rep.lppd_in
            n_fits += 1
    ok = worst < 1e-12 and jensen_ok
    detail = f"max rel diff {worst:.1e}; lpml <= lppd_in on {n_fits} fits: {jensen_ok}"
    assert record(ok, detail), detail


def _median(rows, family, model, metric):
    return float(np.median([float(r[metric]) for r in rows
                            if r["family"] == family and r["model"] == model and r["status"] == "ok"]))


def test_desk_study(criterion, tmp_path):
    record = criterion(6, "desk-scale simulation study (10 replicates, 50 training blocks)")
    t0 = time.perf_counter()
    bench = pipeline.BenchmarkConfig(families="WEI,GAM,WEI_G,GP", m_train="50", replicates=10)
    rows, _ = pipeline.run_benchmark(tmp_path, bench, synth.ScenarioSpec(), SamplerConfig(),
                                     pipeline.PredictConfig(), pipeline.MetricConfig(), seed=0,
                                     config_hash="acceptance-6")
    failed = [r["cell"] for r in rows if r["status"] != "ok"]
    parts, ok = [], not failed
    for fam in ("WEI", "GAM", "WEI_G"):
        wins, total = pipeline.pairwise_wins(rows, "width90", fam, 50, "hmev")
        ok &= wins >= 8
        parts.append(f"{fam} narrowest band {wins}/{total}")
    for fam in ("WEI", "GAM"):
        h = _median(rows, fam, "hmev", "p_eff")
        g, p = _median(rows, fam, "gev", "p_eff"), _median(rows, fam, "pot", "p_eff")
        ok &= h < g and h < p
        parts.append(f"{fam} median p_eff hmev {h:.2f} gev {g:.2f} pot {p:.2f}")
    fse = {m: _median(rows, "GP", m, "fse") for m in models.MODEL_NAMES}
    ok &= min(fse, key=fse.get) == "pot"
    parts.append("GP median FSE " + " ".join(f"{m} {v:.3f}" for m, v in fse.items()))
    jensen = all(float(r["lpml"]) <= float(r["lppd_in"]) for r in rows if r["status"] == "ok")
    ok &= jensen
    parts.append(f"lpml <= lppd_in on all rows: {jensen}; failed cells {len(failed)}; "
                 f"{(time.perf_counter() - t0) / 60:.1f} min")
    detail = "; ".join(parts)
    assert record(ok, detail), detail


def test_beta_binomial_moments(criterion):
    record = criterion(7, "beta-binomial counts: mean 100, variance 150")
    a, b = synth.betabinom_from_moments(100, 150, 366)
    n = 1_000_000
    x = synth.draw_counts(synth.ScenarioSpec(), n, np.random.default_rng(7)).astype(float)
    pmf = dist.BetaBinomial(a, b, 366)
    k = np.arange(367)
    mu4 = float(np.sum(np.exp(pmf.logpdf(k)) * (k - 100.0) ** 4))
    z_mean = (x.mean() - 100) / np.sqrt(150 / n)
    z_var = (x.var() - 150) / np.sqrt((mu4 - 150**2) / n)
    ok = abs(z_mean) < 3 and abs(z_var) < 3
    detail = f"alpha {a:.4f}, beta {b:.4f}; mean z {z_mean:+.2f}, variance z {z_var:+.2f}"
    assert record(ok, detail), detail


def test_ingestion(criterion, tmp_path):
    record = criterion(8, "archive round trip, QC year drops, declustering")
    rng = np.random.default_rng(8)
    rec = ingest.synthetic_record("USC00999999", 1950, 12, rng, missing_rate=0.03, flag_rate=0.002)
    text = ingest.format_station_file(rec)
    path = tmp_path / "s.dly"
    path.write_bytes(text.encode())
    back = ingest.parse_station_file(path)
    round_trip = back == rec and ingest.format_station_file(back).encode() == path.read_bytes()

    # exactly 25..35 missing days per year; years with more than 30 must go
    values = rec.values.copy()
    values[np.isnan(values)] = 0.0
    expected_drop = set()
    for y in np.unique(rec.years):
        idx = np.flatnonzero(rec.years == y)
        k = int(rng.integers(25, 36))
        values[rng.choice(idx, size=k, replace=False)] = np.nan
        if k > 30:
            expected_drop.add(int(y))
    clean = ingest.StationRecord(rec.station_id, rec.dates, values, np.full(len(values), "   "))
    qc = ingest.apply_qc(clean, ingest.QcConfig(min_years=0))
    qc_ok = set(qc.dropped_years) == expected_drop and qc.retained_years == sorted(
        set(np.unique(rec.years).tolist()) - expected_drop)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        dec = ingest.decluster(qc.record)
    maxima_ok = all(blk.magnitudes.max() == np.nanmax(qc.record.values[qc.record.years == int(lab)])
                    for blk, lab in zip(dec.dataset.blocks, dec.dataset.labels))
    scan_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        x = np.where(rng.random(n) < 0.4, np.round(rng.exponential(5.0, n), 1), 0.0)
        tau = int(rng.integers(0, 7))
        scan_ok &= list(np.flatnonzero(ingest.window_maxima(x, tau))) == scan_events(list(x), tau)
    ok = round_trip and qc_ok and maxima_ok and scan_ok
    detail = (f"round trip {round_trip}; QC dropped {sorted(qc.dropped_years)} (expected "
              f"{sorted(expected_drop)}); annual maxima kept {maxima_ok}; window scan oracle {scan_ok}")
    assert record(ok, detail), detail


def test_end_to_end_record(criterion):
    record = criterion(9, "150-year record: HMEV band at T=50 narrower, first 20 and 50 years")
    t0 = time.perf_counter()
    raw = ingest.synthetic_record("SYN0000NYC", 1870, 150, np.random.default_rng(9))
    data, report = ingest.process_station(raw)
    assert data is not None and data.J == 150, report
    widths = {}
    for m_train in (20, 50):
        train, _ = ingest.split_train_test(data, m_train)
        for name in models.MODEL_NAMES:
            fitted = pipeline.fit_model(name, train, SamplerConfig(seed=m_train))
            law = pipeline.predictive_law(fitted, m_train)
            widths[m_train, name] = predictive.quantile_curve(law, [50.0]).band_width(50.0)
    elapsed = time.perf_counter() - t0
    ok = elapsed < 1800 and all(widths[m, "hmev"] < min(widths[m, "gev"], widths[m, "pot"]) for m in (20, 50))
    detail = "; ".join(f"M={m}: " + " ".join(f"{n} {widths[m, n]:.1f}" for n in models.MODEL_NAMES)
                       for m in (20, 50)) + f" mm; {elapsed / 60:.1f} min"
    assert record(ok, detail), detail


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _cli_session(root, workers):
    quick = ["--set", "sampler.chains=2", "--set", "sampler.iterations=300", "--workers", str(workers)]
    small = ["--set", "scenario.replicates=1", "--set", "scenario.m_train=15", "--set", "scenario.m_test=40"]
    codes = [cli.main(["simulate", "--out", str(root / "sim"), *small, *quick])]
    train, test = root / "sim" / "WEI_r000_train.csv", root / "sim" / "WEI_r000_test.csv"
    codes.append(cli.main(["fit", "--data", str(train), "--model", "hmev,gev,pot", "--out", str(root / "fit"),
                           *quick]))
    draws = [str(p) for p in sorted((root / "fit").glob("*_draws.csv"))]
    codes.append(cli.main(["predict", "--draws", *draws, "--out", str(root / "pred"), *quick]))
    codes.append(cli.main(["validate", "--draws", *draws, "--train", str(train), "--test", str(test),
                           "--ledger", str(root / "ledger.csv"), *quick]))
    rec = ingest.synthetic_record("USC00000010", 1900, 6, np.random.default_rng(10), missing_rate=0.01)
    ingest.write_station_file(rec, root / "st.dly")
    codes.append(cli.main(["ingest", str(root / "st.dly"), "--out", str(root / "ing"), "--set", "qc.min_years=5",
                           "--set", "split.m_train=3", "--set", "split.mode=random", *quick]))
    codes.append(cli.main(["benchmark", "--out", str(root / "bench"), "--set", "benchmark.families=WEI,GP",
                           "--set", "benchmark.m_train=10", "--set", "benchmark.replicates=2",
                           "--set", "scenario.m_test=30", *quick]))
    return codes


def test_determinism(criterion, tmp_path, capsys):
    record = criterion(10, "byte-identical outputs across reruns and worker counts")
    runs = {}
    for label, workers in (("a", 1), ("b", 1), ("c", 3)):
        root = tmp_path / label
        root.mkdir()
        codes = _cli_session(root, workers)
        assert codes == [0] * len(codes), codes
        runs[label] = _tree(root)
    capsys.readouterr()
    names = sorted(runs["a"])
    diff = [n for n in names if any(runs[k].get(n) != runs["a"][n] for k in ("b", "c"))]
    same_sets = all(sorted(runs[k]) == names for k in ("b", "c"))
    ok = same_sets and not diff
    detail = f"{len(names)} files compared over 3 runs (workers 1, 1, 3); differing: {diff or 'none'}"
    assert record(ok, detail), detail
