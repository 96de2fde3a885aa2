"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest -s tests/test_acceptance.py` to see the lines as they
complete.  The statistical checks use fixed seeds, so outcomes are
reproducible; tolerances are binomial or oracle based.
"""

import json
import math

import numpy as np
import pytest

from oob_bands.cli import main as cli_main
from oob_bands.distributions import (
    normal_quantile,
    residual_params_from_sigma2,
    sample_residuals,
)
from oob_bands.forest import (
    ForestConfig,
    build_forest,
    leaf_weights,
    oob_residuals,
    predict_forest,
    predict_oob,
)
from oob_bands.intervals import (
    PredictionInterval,
    nonparametric_interval,
    qrf_cdf,
    qrf_quantile,
)
from oob_bands.simulation import (
    ScenarioConfig,
    coverage_type1,
    coverage_type3,
    generate_dataset,
)
from oob_bands.variance import sigma2_corrected, sigma2_simple

from conftest import make_residuals


def _check(num, name, ok, detail=""):
    print(f"[acceptance {num:02d}] {'PASS' if ok else 'FAIL'} {name} {detail}")
    assert ok, f"acceptance {num} ({name}) {detail}"


def test_criterion_01_oob_exclusion_lln():
    rng = np.random.default_rng(1001)
    n = 200
    X = rng.random((n, 3))
    y = rng.standard_normal(n)

    boot = build_forest((X, y), ForestConfig(num_trees=2000, seed=11))
    z_boot = oob_residuals(boot, (X, y)).tree_count
    mean_boot = float(np.mean(z_boot / 2000))
    target = (1.0 - 1.0 / n) ** n  # 0.36696

    sub = build_forest(
        (X, y),
        ForestConfig(num_trees=2000, seed=12, resample_mode="subsample",
                     resample_count=126),
    )
    z_sub = oob_residuals(sub, (X, y)).tree_count
    mean_sub = float(np.mean(z_sub / 2000))

    ok = abs(mean_boot - target) <= 0.02 and abs(mean_sub - 0.37) <= 0.02
    _check(1, "oob-exclusion-lln", ok,
           f"bootstrap={mean_boot:.4f} (target {target:.4f}), subsample={mean_sub:.4f}")


def test_criterion_02_forest_oracle_equivalence():
    rng = np.random.default_rng(1002)
    n, p = 20, 3
    X = rng.random((n, p))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.2 * rng.standard_normal(n)
    forest = build_forest((X, y), ForestConfig(num_trees=10, seed=7, min_node_size=2))

    def walk(tree, x):
        nid = 0
        while tree.feature[nid] >= 0:
            if x[tree.feature[nid]] <= tree.threshold[nid]:
                nid = int(tree.left[nid])
            else:
                nid = int(tree.right[nid])
        return nid

    probes = rng.random((30, p))
    preds_ok = all(
        predict_forest(forest, x)
        == sum(float(t.value[walk(t, x)]) for t in forest.trees) / 10
        for x in probes
    )

    oob_ok = True
    for i in range(n):
        picked = [
            t for t, m in zip(forest.trees, forest.bag_masks) if m.counts[i] == 0
        ]
        pred, z = predict_oob(forest, (X, y), i)
        if z != len(picked):
            oob_ok = False
        elif picked:
            brute = sum(float(t.value[walk(t, X[i])]) for t in picked) / len(picked)
            oob_ok = oob_ok and pred == brute
        else:
            oob_ok = oob_ok and pred is None

    weights_ok = True
    for x in probes[:10]:
        w = np.zeros(n)
        for t in forest.trees:
            nid = walk(t, x)
            members = t.samples[t.node_start[nid]:t.node_end[nid]]
            for k in members:
                w[k] += 1.0 / len(members)
        w /= 10
        weights_ok = weights_ok and np.max(np.abs(w - leaf_weights(forest, x))) <= 1e-12

    _check(2, "forest-oracle-equivalence", preds_ok and oob_ok and weights_ok,
           f"predict bitwise={preds_ok}, oob bitwise={oob_ok}, weights 1e-12={weights_ok}")


def test_criterion_03_ols_exact_type3_coverage():
    scenario = ScenarioConfig(
        regression_fn="linear", covariance="identity", residual_family="normal",
        sn=1.0, n=100, mc=2000, methods=("ols",), coverage_type="III", seed=303,
    )
    report = coverage_type3(scenario)[0]
    ok = abs(report.coverage - 0.95) <= 0.02
    _check(3, "ols-type3-coverage", ok, f"p_hat={report.coverage:.4f} (0.95 +- 0.02)")


class _OracleInterval:
    name = "oracle"
    needs_forest = False
    needs_data = False

    def build(self, ctx):
        m0 = ctx.true_mean()
        half = normal_quantile(1 - ctx.scenario.alpha / 2) * math.sqrt(ctx.sigma2_true)
        return PredictionInterval(m0 - half, m0 + half, ctx.scenario.alpha,
                                  self.name, m0)


def test_criterion_04_oracle_interval_harness_sanity():
    scenario = ScenarioConfig(
        regression_fn="linear", covariance="identity", residual_family="normal",
        sn=1.0, n=100, mc=5000, methods=(_OracleInterval(),), seed=404,
    )
    report = coverage_type1(scenario)[0]
    ok = abs(report.coverage - 0.95) <= 0.01
    _check(4, "oracle-harness-sanity", ok, f"p_hat={report.coverage:.4f} (0.95 +- 0.01)")


def test_criterion_05_prf_desk_scale_coverage():
    scenario = ScenarioConfig(
        regression_fn="linear", covariance="identity", residual_family="normal",
        sn=1.0, n=500, num_trees=300, mc=300, methods=("prf",), seed=505,
    )
    report = coverage_type1(scenario)[0]
    ok = 0.90 <= report.coverage <= 0.99
    _check(5, "prf-desk-scale-coverage", ok,
           f"p_hat={report.coverage:.4f} in [0.90, 0.99], mean_len={report.mean_length:.3f}")


def test_criterion_06_variance_consistency_trend():
    scenario_base = dict(
        regression_fn="linear", covariance="identity", residual_family="normal",
        sn=1.0, num_trees=500,
    )
    medians = []
    for n in (100, 400, 1600):
        errs = []
        for rep in range(10):
            scenario = ScenarioConfig(n=n, seed=606, **scenario_base)
            rng = np.random.default_rng((606, n, rep))
            X, y, sigma2_true = generate_dataset(scenario, rng)
            forest = build_forest((X, y), scenario.forest_config(seed=rep * 31 + n))
            est = sigma2_simple(oob_residuals(forest, (X, y)))
            errs.append(abs(est.value / sigma2_true - 1.0))
        medians.append(float(np.median(errs)))
    ok = medians[0] >= medians[1] >= medians[2] and medians[2] <= 0.25
    _check(6, "variance-consistency-trend", ok,
           "medians n=100/400/1600: " + "/".join(f"{m:.3f}" for m in medians))


def test_criterion_07_finite_m_correction_algebra():
    rng = np.random.default_rng(707)
    ok_exact = True
    ok_limit = True
    for _ in range(1000):
        root = rng.uniform(0.3, 1.4)
        max_pred = rng.uniform(0.0, 5.0)
        num_trees = int(rng.integers(1, 10_000))
        n = int(rng.integers(2, 2000))
        res = make_residuals([root])
        simple = sigma2_simple(res)
        corrected = sigma2_corrected(res, [max_pred], num_trees, n)
        c = corrected.correction_term
        # |corrected - simple| equals C (at the roundoff of sigma2 itself)
        if corrected.value != abs(simple.value - c):
            ok_exact = False
        if c <= simple.value:
            diff = abs(corrected.value - simple.value)
            if abs(diff - c) > 1e-9 * max(c, 1e-30):
                ok_exact = False
        huge = sigma2_corrected(res, [max_pred], 10**9, n)
        if abs(huge.value - simple.value) > 1e-6:
            ok_limit = False
    _check(7, "finite-m-correction-algebra", ok_exact and ok_limit,
           f"identity={ok_exact}, M->1e9 limit={ok_limit}")


def test_criterion_08_np_qrf_structure():
    rng = np.random.default_rng(808)
    X = rng.random((80, 4))
    y = X @ np.array([2.0, -1.0, 0.5, 0.0]) + rng.standard_normal(80)
    forest = build_forest((X, y), ForestConfig(num_trees=60, seed=8))
    res = oob_residuals(forest, (X, y))
    alpha = 0.05
    iv = nonparametric_interval(1.5, res, alpha)
    ordered = np.sort(res.valid_residuals())
    nv = ordered.size
    lo_rank = math.ceil(alpha / 2 * nv)
    hi_rank = math.ceil((1 - alpha / 2) * nv)
    np_ok = (iv.lower == 1.5 + ordered[lo_rank - 1]
             and iv.upper == 1.5 + ordered[hi_rank - 1])

    grid = np.linspace(0.01, 0.99, 99)
    qrf_ok = True
    for k in range(50):
        frng = np.random.default_rng((808, k))
        Xf = frng.random((30, 3))
        yf = frng.standard_normal(30)
        f = build_forest((Xf, yf), ForestConfig(num_trees=10, seed=k, min_node_size=2))
        cdf = qrf_cdf(f, (Xf, yf), frng.random(3))
        quantiles = [qrf_quantile(cdf, a) for a in grid]
        if not np.all(np.diff(quantiles) >= 0.0):
            qrf_ok = False
    _check(8, "np-qrf-structure", np_ok and qrf_ok,
           f"np order-statistics exact={np_ok}, qrf monotone={qrf_ok}")


def test_criterion_09_sn_parameterization():
    rng = np.random.default_rng(909)
    cases = [(fam, s2) for fam in ("normal", "exponential", "log-normal")
             for s2 in (4.0, 16.0)]
    cases.append(("student-t", 4.0))  # df = 8/3 has finite variance
    details = []
    ok = True
    for family, sigma2 in cases:
        spec = residual_params_from_sigma2(family, sigma2)
        draws = sample_residuals(spec, rng, size=10**6)
        mean_ok = abs(draws.mean()) <= 0.01 * math.sqrt(sigma2)
        var_ok = abs(draws.var() / sigma2 - 1.0) <= 0.10
        ok = ok and mean_ok and var_ok
        details.append(f"{family}@{sigma2:g}:var={draws.var():.3f}")
    _check(9, "sn-parameterization", ok, " ".join(details))


def test_criterion_10_simulate_thread_determinism(tmp_path):
    config = {
        "seed": 20260808,
        "scenarios": [
            {"regression_fn": "linear", "covariance": "identity",
             "residual_family": "normal", "n": 60, "trees": 40, "mc": 25,
             "methods": ["prf", "np-eq"], "coverage_type": "I"},
            {"regression_fn": "trigonometric", "covariance": "pos-ar",
             "residual_family": "exponential", "n": 60, "trees": 40,
             "mc_outer": 6, "mc_inner": 40, "methods": ["prf-w", "qrf"],
             "coverage_type": "II"},
            {"regression_fn": "non-continuous", "covariance": "toeplitz",
             "residual_family": "log-normal", "n": 60, "trees": 40, "mc": 25,
             "methods": ["ols", "prf-mcor"], "coverage_type": "III"},
            {"regression_fn": "polynomial", "covariance": "compound",
             "residual_family": "student-t", "sn": 3, "n": 60, "trees": 40,
             "mc_outer": 6, "mc_inner": 40, "methods": ["prf", "qrf"],
             "coverage_type": "IV"},
        ],
    }
    cpath = tmp_path / "grid.json"
    cpath.write_text(json.dumps(config))
    out1 = tmp_path / "t1.csv"
    out8 = tmp_path / "t8.csv"
    code1 = cli_main(["simulate", "--config", str(cpath), "--out", str(out1),
                      "--threads", "1"])
    code8 = cli_main(["simulate", "--config", str(cpath), "--out", str(out8),
                      "--threads", "8"])
    identical = out1.read_bytes() == out8.read_bytes()
    ok = code1 == 0 and code8 == 0 and identical
    _check(10, "simulate-thread-determinism", ok,
           f"exit codes {code1}/{code8}, byte-identical={identical}")
