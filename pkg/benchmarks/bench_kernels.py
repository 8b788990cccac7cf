"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each row is the best of ``--repeat`` timings of one call, on inputs sized
like a default fit (J=50 blocks, 4000 draws x 50 future blocks for the
predictive law). Results are checked to agree before timing.
"""
import argparse
import json
import platform
import timeit

import numpy as np

from hmev import _pykernels, kernels, models

try:
    from hmev import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(rng):
    data = models.hmev_generate((9.0, 2.25, 0.7, 0.035), 100 / 366, 366, 50, rng)
    model = models.HmevModel(data)
    v = model.initial_point(rng, 0.1)
    B, M = 4000, 50
    g = rng.uniform(0.6, 0.8, (B, M))
    d = rng.uniform(6.0, 12.0, (B, M))
    n = rng.binomial(366, 0.27, (B, M))
    y = np.geomspace(5.0, 400.0, 40)
    p = np.array([0.5, 0.9, 0.98, 0.99, 0.998])
    return {
        "hmev_log_density (J=50)": lambda impl: kernels.hmev_log_density(v, model, impl=impl),
        "weibull_block_sums (J=50)": lambda impl: kernels.weibull_block_sums(
            model.logx, model.offsets, np.exp(v[5:55]), np.exp(v[55:]), impl=impl),
        "compound_cdf (4000x50, 40 levels)": lambda impl: kernels.compound_cdf(y, g, d, n, impl=impl),
        "compound_quantile (4000x50, 5 probs)": lambda impl: kernels.compound_quantile(p, g, d, n, 1e-8, impl=impl),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-7)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled extension not importable; build with `pip install -e . --no-build-isolation`")

    rows = []
    for name, call in _cases(np.random.default_rng(0)).items():
        if not _same(call(_ckernels), call(_pykernels)):
            raise SystemExit(f"{name}: backends disagree")
        t = {}
        for label, impl in (("compiled", _ckernels), ("python", _pykernels)):
            timer = timeit.Timer(lambda: call(impl))
            number, _ = timer.autorange()
            t[label] = min(timer.repeat(args.repeat, number)) / number
        rows.append({"kernel": name, "compiled_s": t["compiled"], "python_s": t["python"],
                     "speedup": t["python"] / t["compiled"]})

    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'compiled':>11}  {'python':>11}  speedup")
    for r in rows:
        print(f"{r['kernel']:<{width}}  {r['compiled_s'] * 1e3:9.3f}ms  {r['python_s'] * 1e3:9.3f}ms  "
              f"{r['speedup']:6.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"python": platform.python_version(), "machine": platform.machine(), "rows": rows},
                      fh, indent=2)


if __name__ == "__main__":
    main()
