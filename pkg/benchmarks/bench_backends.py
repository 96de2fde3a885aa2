"""Benchmark the compiled split-search kernels against the numpy fallback.

Runs forest training and prediction at a few problem sizes in fresh
subprocesses (the backend is fixed at import time) and prints a table with
the speedup.  Usage:

    python benchmarks/bench_backends.py [--repeats 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json
import sys
import time

import numpy as np

import oob_bands as ob

n, p, trees, repeats = json.loads(sys.argv[1])
rng = np.random.default_rng(12345)
X = rng.random((n, p))
y = X @ np.linspace(1.0, 3.0, p) + rng.normal(size=n)
probe = rng.random((1000, p))
cfg = ob.ForestConfig(num_trees=trees, seed=7)

build = []
predict = []
for _ in range(repeats):
    t0 = time.perf_counter()
    forest = ob.build_forest((X, y), cfg)
    t1 = time.perf_counter()
    ob.predict_forest_batch(forest, probe)
    ob.oob_residuals(forest, (X, y))
    t2 = time.perf_counter()
    build.append(t1 - t0)
    predict.append(t2 - t1)
checksum = float(ob.predict_forest_batch(forest, probe).sum())
print(json.dumps({
    "backend": ob.BACKEND,
    "build": min(build),
    "predict": min(predict),
    "checksum": checksum,
}))
"""


def run_case(backend, n, p, trees, repeats):
    env = dict(os.environ, OOB_BANDS_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-c", WORKER, json.dumps([n, p, trees, repeats])],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    return json.loads(out.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    cases = [(200, 10, 100), (500, 10, 100), (1000, 10, 50)]
    header = f"{'case':>16} {'c build':>9} {'py build':>9} {'speedup':>8}   {'c pred+oob':>10} {'py pred+oob':>11} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n, p, trees in cases:
        results = {}
        for backend in ("c", "python"):
            try:
                results[backend] = run_case(backend, n, p, trees, args.repeats)
            except subprocess.CalledProcessError as exc:
                sys.stderr.write(exc.stderr)
                if backend == "c":
                    print(f"compiled backend unavailable, skipping case n={n}")
                results[backend] = None
        c, py = results["c"], results["python"]
        if c is None or py is None:
            continue
        if c["checksum"] != py["checksum"]:
            raise SystemExit("backends disagree on predictions; refusing to report")
        label = f"n={n} M={trees}"
        print(
            f"{label:>16} {c['build']:9.3f} {py['build']:9.3f} "
            f"{py['build'] / c['build']:7.1f}x   "
            f"{c['predict']:10.4f} {py['predict']:11.4f} "
            f"{py['predict'] / c['predict']:7.1f}x"
        )


if __name__ == "__main__":
    main()
