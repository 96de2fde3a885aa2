"""Monte Carlo measurement of prediction-interval coverage and length.

The four coverage notions differ in what is held fixed: nothing (marginal),
the training set, the query point, or both.  The drivers translate that
conditioning literally: marginal types redraw everything per iteration,
nested types fix the conditioned quantities in an outer loop and redraw the
rest in an inner loop, reporting the per-outer coverage distribution.

Every iteration owns an independent RNG stream keyed by (scenario seed,
coverage type, iteration, retry), so results are reproducible and
independent of scheduling.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ._rng import GOLDEN, MASK64, derive_key, mix64
from .distributions import (
    canonical_covariance,
    canonical_family,
    canonical_regression_fn,
    covariance_matrix,
    estimate_signal_variance,
    gaussian_copula_sample,
    regression_value,
    regression_values,
    residual_params_from_sigma2,
    sample_residuals,
)
from .forest import ForestConfig, build_forest, oob_residuals, predict_forest
from .intervals import (
    INTERVAL_METHODS,
    NP_EQ,
    OLS,
    PRF,
    PRF_MCOR,
    PRF_W,
    QRF,
    nonparametric_interval,
    ols_fit,
    ols_interval_from_fit,
    parametric_interval,
    qrf_interval,
)
from .variance import sigma2_corrected, sigma2_simple, sigma2_weighted

COVERAGE_TYPES = ("I", "II", "III", "IV")
MARGINAL_TYPES = ("I", "III")

GRID_SN = (0.5, 1.0, 3.0)
GRID_N = (100, 500, 1000)
GRID_P = 10
GRID_ALPHA = 0.05

DEFAULT_METHODS = (OLS, QRF, NP_EQ, PRF, PRF_MCOR, PRF_W)

_TYPE_TAG = {"I": 1, "II": 2, "III": 3, "IV": 4}
_X0_TAG = 1000
MAX_FAILURE_RATE = 0.01


def canonical_coverage_type(value) -> str:
    key = str(value).strip().upper()
    aliases = {"1": "I", "2": "II", "3": "III", "4": "IV"}
    key = aliases.get(key, key)
    if key not in COVERAGE_TYPES:
        raise ValueError(f"unknown coverage type {value!r}")
    return key


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the simulation grid."""

    regression_fn: str = "linear"
    covariance: str = "identity"
    residual_family: str = "normal"
    sn: float = 1.0
    n: int = 100
    p: int = GRID_P
    alpha: float = GRID_ALPHA
    coverage_type: str = "I"
    methods: tuple = DEFAULT_METHODS
    mc: int = 1000
    mc_outer: int = 50
    mc_inner: int = 200
    num_trees: int = 500
    mtry: int | None = None
    min_node_size: int = 5
    resample_mode: str = "bootstrap"
    resample_count: int | None = None
    max_terminal_nodes: int | None = None
    seed: int | None = None
    scenario_id: str = ""
    signal_draws: int = 100_000

    def canonical(self) -> "ScenarioConfig":
        methods = tuple(
            m if not isinstance(m, str) else m.strip().lower() for m in self.methods
        )
        for m in methods:
            if isinstance(m, str) and m not in INTERVAL_METHODS:
                raise ValueError(f"unknown interval method {m!r}")
        s = replace(
            self,
            regression_fn=canonical_regression_fn(self.regression_fn),
            covariance=canonical_covariance(self.covariance),
            residual_family=canonical_family(self.residual_family),
            coverage_type=canonical_coverage_type(self.coverage_type),
            methods=methods,
            sn=float(self.sn),
            alpha=float(self.alpha),
            n=int(self.n),
            p=int(self.p),
        )
        if s.n < 2:
            raise ValueError("n must be >= 2")
        if not 0.0 < s.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {s.alpha}")
        if s.sn <= 0.0:
            raise ValueError("sn must be positive")
        if s.mc < 1 or s.mc_outer < 1 or s.mc_inner < 1:
            raise ValueError("Monte Carlo counts must be >= 1")
        return s

    @property
    def custom(self) -> bool:
        """True when any knob leaves the standard simulation grid."""
        return not (
            self.sn in GRID_SN
            and self.n in GRID_N
            and self.p == GRID_P
            and self.alpha == GRID_ALPHA
        )

    def forest_config(self, seed: int) -> ForestConfig:
        return ForestConfig(
            num_trees=self.num_trees,
            mtry=self.mtry,
            resample_count=self.resample_count,
            resample_mode=self.resample_mode,
            min_node_size=self.min_node_size,
            max_terminal_nodes=self.max_terminal_nodes,
            seed=seed,
        )


@dataclass(frozen=True)
class CoverageReport:
    """Estimated coverage and mean length for one (scenario, method)."""

    scenario_id: str
    method: str
    coverage_type: str
    coverage: float
    mean_length: float
    mc: int
    mc_inner: int | None
    failures: int
    seed: int
    coverage_sd: float | None = None
    per_replicate: np.ndarray | None = field(default=None, repr=False)
    lengths: np.ndarray | None = field(default=None, repr=False)
    x0: np.ndarray | None = None


class DegenerateScenarioError(ValueError):
    """The scenario cannot produce data (zero signal variance)."""


def prepare_scenario(scenario: ScenarioConfig):
    """Covariance, true residual variance, and residual spec for a scenario."""
    s = scenario.canonical()
    sigma = covariance_matrix(s.covariance, s.p)
    var_m = estimate_signal_variance(s.regression_fn, sigma, s.signal_draws)
    if var_m <= 0.0:
        raise DegenerateScenarioError(
            "degenerate signal: Var(m(X)) = 0, cannot set a noise level"
        )
    sigma2_true = var_m / s.sn
    spec = residual_params_from_sigma2(s.residual_family, sigma2_true)
    return sigma, sigma2_true, spec


def generate_dataset(scenario: ScenarioConfig, rng: np.random.Generator):
    """Draw (X, y, sigma2_true) for one scenario replicate."""
    s = scenario.canonical()
    sigma, sigma2_true, spec = prepare_scenario(s)
    X = gaussian_copula_sample(sigma, rng, size=s.n)
    eps = sample_residuals(spec, rng, size=s.n)
    y = regression_values(s.regression_fn, X) + eps
    return X, y, sigma2_true


class FittedModel:
    """Per-training-set artifacts, computed lazily as methods request them."""

    def __init__(self, scenario, sigma2_true, X=None, y=None, forest_seed=0):
        self.scenario = scenario
        self.sigma2_true = sigma2_true
        self.X = X
        self.y = y
        self.forest_seed = forest_seed

    def _require_data(self):
        if self.X is None:
            raise RuntimeError("this model was fitted without data access")

    @cached_property
    def forest(self):
        self._require_data()
        return build_forest(
            (self.X, self.y), self.scenario.forest_config(self.forest_seed)
        )

    @cached_property
    def oob(self):
        return oob_residuals(self.forest, (self.X, self.y))

    @cached_property
    def sigma_simple(self):
        return sigma2_simple(self.oob)

    @cached_property
    def sigma_corrected(self):
        return sigma2_corrected(
            self.oob, self.oob.oob_prediction, self.forest.num_trees, self.forest.n
        )

    @cached_property
    def sigma_weighted(self):
        return sigma2_weighted(self.sigma_simple, self.sigma_corrected, 0.5)

    @cached_property
    def ols(self):
        self._require_data()
        return ols_fit(self.X, self.y)

    def predict(self, x0) -> float:
        return predict_forest(self.forest, x0)


@dataclass
class IterationContext:
    """What an interval method sees for one replicate.

    y0 is the realized response for types whose interval may be checked
    pointwise (marginal and type-II drivers); it is None under type-IV,
    where the interval is built before the response draws.
    """

    model: FittedModel
    x0: np.ndarray
    y0: float | None = None

    @property
    def scenario(self):
        return self.model.scenario

    @property
    def sigma2_true(self):
        return self.model.sigma2_true

    def true_mean(self) -> float:
        return regression_value(self.scenario.regression_fn, self.x0)


@dataclass(frozen=True)
class _Builtin:
    name: str
    needs_forest: bool
    needs_data: bool

    def build(self, ctx: IterationContext):
        model, x0, alpha = ctx.model, ctx.x0, ctx.scenario.alpha
        if self.name == PRF:
            return parametric_interval(model.predict(x0), model.sigma_simple, alpha)
        if self.name == PRF_MCOR:
            return parametric_interval(model.predict(x0), model.sigma_corrected, alpha)
        if self.name == PRF_W:
            return parametric_interval(model.predict(x0), model.sigma_weighted, alpha)
        if self.name == NP_EQ:
            return nonparametric_interval(model.predict(x0), model.oob, alpha)
        if self.name == QRF:
            return qrf_interval(model.forest, (model.X, model.y), x0, alpha)
        if self.name == OLS:
            return ols_interval_from_fit(model.ols, x0, alpha)
        raise ValueError(f"unknown interval method {self.name!r}")


_BUILTINS = {
    PRF: _Builtin(PRF, True, True),
    PRF_MCOR: _Builtin(PRF_MCOR, True, True),
    PRF_W: _Builtin(PRF_W, True, True),
    NP_EQ: _Builtin(NP_EQ, True, True),
    QRF: _Builtin(QRF, True, True),
    OLS: _Builtin(OLS, False, True),
}


def resolve_methods(methods):
    """Map method names to builtin builders; pass method objects through."""
    resolved = []
    for m in methods:
        if isinstance(m, str):
            if m not in _BUILTINS:
                raise ValueError(f"unknown interval method {m!r}")
            resolved.append(_BUILTINS[m])
        else:
            resolved.append(m)
    return resolved


def _effective_seed(scenario: ScenarioConfig) -> int:
    return scenario.seed if scenario.seed is not None else 0


def _rng_for(seed: int, tag: int, index: int, retry: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, tag, index, retry)))


def derived_x0(scenario: ScenarioConfig, sigma=None) -> np.ndarray:
    """The fixed query point for types III/IV: a dedicated copula draw."""
    s = scenario.canonical()
    if sigma is None:
        sigma = covariance_matrix(s.covariance, s.p)
    rng = _rng_for(_effective_seed(s), _X0_TAG, 0)
    return gaussian_copula_sample(sigma, rng)


def _fit(scenario, sigma, sigma2_true, spec, rng, needs_data, needs_forest):
    if not (needs_data or needs_forest):
        return FittedModel(scenario, sigma2_true)
    X = gaussian_copula_sample(sigma, rng, size=scenario.n)
    eps = sample_residuals(spec, rng, size=scenario.n)
    y = regression_values(scenario.regression_fn, X) + eps
    forest_seed = int(rng.integers(0, 2**63))
    return FittedModel(scenario, sigma2_true, X, y, forest_seed)


class _Accumulator:
    """Covered counts and lengths for one method."""

    def __init__(self):
        self.covered = []
        self.lengths = []

    def add(self, interval, y0):
        self.covered.append(1.0 if interval.covers(y0) else 0.0)
        self.lengths.append(interval.length)


def _check_failures(failures: int, planned: int, last_error) -> None:
    if failures and failures / planned > MAX_FAILURE_RATE:
        raise RuntimeError(
            f"{failures}/{planned} Monte Carlo iterations failed"
        ) from last_error


def _marginal_reports(scenario, methods, accs, failures, seed, x0=None):
    reports = []
    for method, acc in zip(methods, accs):
        covered = np.asarray(acc.covered)
        lengths = np.asarray(acc.lengths)
        reports.append(
            CoverageReport(
                scenario_id=scenario.scenario_id,
                method=method.name,
                coverage_type=scenario.coverage_type,
                coverage=float(covered.mean()) if covered.size else float("nan"),
                mean_length=float(lengths.mean()) if lengths.size else float("nan"),
                mc=int(covered.size),
                mc_inner=None,
                failures=failures,
                seed=seed,
                per_replicate=covered,
                lengths=lengths,
                x0=None if x0 is None else np.asarray(x0, dtype=np.float64),
            )
        )
    return reports


def coverage_type1(scenario: ScenarioConfig) -> list:
    """Marginal coverage: fresh training set, query point, and response
    noise every iteration."""
    s = scenario.canonical()
    seed = _effective_seed(s)
    sigma, sigma2_true, spec = prepare_scenario(s)
    methods = resolve_methods(s.methods)
    needs_data = any(m.needs_data for m in methods)
    needs_forest = any(m.needs_forest for m in methods)
    accs = [_Accumulator() for _ in methods]
    failures = 0
    last_error = None
    for it in range(s.mc):
        for retry in (0, 1):
            rng = _rng_for(seed, _TYPE_TAG["I"], it, retry)
            try:
                model = _fit(s, sigma, sigma2_true, spec, rng, needs_data, needs_forest)
                x0 = gaussian_copula_sample(sigma, rng)
                y0 = regression_value(s.regression_fn, x0) + sample_residuals(spec, rng)
                ctx = IterationContext(model, x0, y0)
                intervals = [m.build(ctx) for m in methods]
            except Exception as exc:  # noqa: BLE001 - component failures are counted
                last_error = exc
                if retry:
                    failures += 1
                continue
            for acc, interval in zip(accs, intervals):
                acc.add(interval, y0)
            break
    _check_failures(failures, s.mc, last_error)
    return _marginal_reports(s, methods, accs, failures, seed)


def coverage_type3(scenario: ScenarioConfig, x0=None) -> list:
    """Coverage at a fixed query point: fresh training set and noise per
    iteration, x0 held constant throughout."""
    s = scenario.canonical()
    seed = _effective_seed(s)
    sigma, sigma2_true, spec = prepare_scenario(s)
    if x0 is None:
        x0 = derived_x0(s, sigma)
    x0 = np.asarray(x0, dtype=np.float64)
    m_x0 = regression_value(s.regression_fn, x0)
    methods = resolve_methods(s.methods)
    needs_data = any(m.needs_data for m in methods)
    needs_forest = any(m.needs_forest for m in methods)
    accs = [_Accumulator() for _ in methods]
    failures = 0
    last_error = None
    for it in range(s.mc):
        for retry in (0, 1):
            rng = _rng_for(seed, _TYPE_TAG["III"], it, retry)
            try:
                model = _fit(s, sigma, sigma2_true, spec, rng, needs_data, needs_forest)
                y0 = m_x0 + sample_residuals(spec, rng)
                ctx = IterationContext(model, x0, y0)
                intervals = [m.build(ctx) for m in methods]
            except Exception as exc:  # noqa: BLE001
                last_error = exc
                if retry:
                    failures += 1
                continue
            for acc, interval in zip(accs, intervals):
                acc.add(interval, y0)
            break
    _check_failures(failures, s.mc, last_error)
    return _marginal_reports(s, methods, accs, failures, seed, x0=x0)


def _nested_reports(scenario, methods, per_outer, lengths, failures, seed, x0=None):
    reports = []
    for k, method in enumerate(methods):
        outers = np.asarray([row[k] for row in per_outer])
        lens = np.asarray([row[k] for row in lengths])
        reports.append(
            CoverageReport(
                scenario_id=scenario.scenario_id,
                method=method.name,
                coverage_type=scenario.coverage_type,
                coverage=float(outers.mean()) if outers.size else float("nan"),
                mean_length=float(lens.mean()) if lens.size else float("nan"),
                mc=int(outers.size),
                mc_inner=scenario.mc_inner,
                failures=failures,
                seed=seed,
                coverage_sd=float(outers.std(ddof=1)) if outers.size > 1 else None,
                per_replicate=outers,
                lengths=lens,
                x0=None if x0 is None else np.asarray(x0, dtype=np.float64),
            )
        )
    return reports


def coverage_type2(scenario: ScenarioConfig) -> list:
    """Coverage conditional on the training set: each outer replicate
    trains once, the inner loop redraws the query point and noise."""
    s = scenario.canonical()
    seed = _effective_seed(s)
    sigma, sigma2_true, spec = prepare_scenario(s)
    methods = resolve_methods(s.methods)
    needs_data = any(m.needs_data for m in methods)
    needs_forest = any(m.needs_forest for m in methods)
    per_outer = []
    lengths = []
    failures = 0
    last_error = None
    for outer in range(s.mc_outer):
        for retry in (0, 1):
            rng = _rng_for(seed, _TYPE_TAG["II"], outer, retry)
            try:
                model = _fit(s, sigma, sigma2_true, spec, rng, needs_data, needs_forest)
                x0s = gaussian_copula_sample(sigma, rng, size=s.mc_inner)
                eps = sample_residuals(spec, rng, size=s.mc_inner)
                y0s = regression_values(s.regression_fn, x0s) + eps
                hits = np.zeros(len(methods))
                lens = np.zeros(len(methods))
                for j in range(s.mc_inner):
                    ctx = IterationContext(model, x0s[j], float(y0s[j]))
                    for k, method in enumerate(methods):
                        interval = method.build(ctx)
                        hits[k] += interval.covers(y0s[j])
                        lens[k] += interval.length
            except Exception as exc:  # noqa: BLE001
                last_error = exc
                if retry:
                    failures += 1
                continue
            per_outer.append(hits / s.mc_inner)
            lengths.append(lens / s.mc_inner)
            break
    _check_failures(failures, s.mc_outer, last_error)
    return _nested_reports(s, methods, per_outer, lengths, failures, seed)


def coverage_type4(scenario: ScenarioConfig, x0=None) -> list:
    """Coverage conditional on both the training set and the query point:
    the interval is fixed per outer replicate, only the response noise is
    redrawn inside."""
    s = scenario.canonical()
    seed = _effective_seed(s)
    sigma, sigma2_true, spec = prepare_scenario(s)
    if x0 is None:
        x0 = derived_x0(s, sigma)
    x0 = np.asarray(x0, dtype=np.float64)
    m_x0 = regression_value(s.regression_fn, x0)
    methods = resolve_methods(s.methods)
    needs_data = any(m.needs_data for m in methods)
    needs_forest = any(m.needs_forest for m in methods)
    per_outer = []
    lengths = []
    failures = 0
    last_error = None
    for outer in range(s.mc_outer):
        for retry in (0, 1):
            rng = _rng_for(seed, _TYPE_TAG["IV"], outer, retry)
            try:
                model = _fit(s, sigma, sigma2_true, spec, rng, needs_data, needs_forest)
                ctx = IterationContext(model, x0, None)
                intervals = [m.build(ctx) for m in methods]
                eps = sample_residuals(spec, rng, size=s.mc_inner)
                y0s = m_x0 + eps
            except Exception as exc:  # noqa: BLE001
                last_error = exc
                if retry:
                    failures += 1
                continue
            per_outer.append(
                [float(np.mean((iv.lower <= y0s) & (y0s <= iv.upper))) for iv in intervals]
            )
            lengths.append([iv.length for iv in intervals])
            break
    _check_failures(failures, s.mc_outer, last_error)
    return _nested_reports(s, methods, per_outer, lengths, failures, seed, x0=x0)


_COVERAGE_DRIVERS = {
    "I": coverage_type1,
    "II": coverage_type2,
    "III": coverage_type3,
    "IV": coverage_type4,
}


def run_scenario(scenario: ScenarioConfig) -> list:
    """Dispatch a scenario to the driver for its coverage type."""
    s = scenario.canonical()
    return _COVERAGE_DRIVERS[s.coverage_type](s)


def derive_scenario_seed(master_seed: int, index: int) -> int:
    """Per-scenario seed from the master seed and the scenario's position."""
    return derive_key(mix64((master_seed + GOLDEN) & MASK64), index)


def run_grid(scenarios, master_seed: int = 0, threads: int = 1) -> list:
    """Run a list of scenarios, filling in derived seeds and ids.

    Scenarios with an explicit seed keep it; the rest get deterministic
    seeds from (master seed, index).  Scenario execution is independent, so
    the grid may be spread over threads without changing any report.
    """
    prepared = []
    for i, s in enumerate(scenarios):
        s = s.canonical()
        if s.seed is None:
            s = replace(s, seed=derive_scenario_seed(master_seed, i))
        if not s.scenario_id:
            s = replace(s, scenario_id=f"s{i:03d}")
        prepared.append(s)
    if threads <= 1 or len(prepared) <= 1:
        results = [run_scenario(s) for s in prepared]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_scenario, prepared))
    reports = []
    for result in results:
        reports.extend(result)
    return reports
