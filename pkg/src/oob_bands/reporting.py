"""Run-configuration documents, result rows, and CSV I/O.

The run configuration is a JSON document: global keys (seed, threads,
output) plus a list of scenario objects whose keys mirror ScenarioConfig.
Unknown keys are rejected by name so typos fail loudly.  Results are
written as one CSV row per (scenario, method) with reals at 6 significant
digits.
"""

import csv
import json
from dataclasses import dataclass, fields, replace

from .simulation import CoverageReport, ScenarioConfig

RESULT_FIELDS = (
    "scenario_id",
    "method",
    "coverage_type",
    "n",
    "p",
    "sn",
    "residual_family",
    "covariance_kind",
    "regression_fn",
    "alpha",
    "coverage",
    "coverage_sd",
    "mean_length",
    "mc_outer",
    "mc_inner",
    "failures",
    "seed",
)


@dataclass(frozen=True)
class ResultRow:
    scenario_id: str
    method: str
    coverage_type: str
    n: int
    p: int
    sn: float
    residual_family: str
    covariance_kind: str
    regression_fn: str
    alpha: float
    coverage: float
    coverage_sd: float | None
    mean_length: float
    mc_outer: int
    mc_inner: int | None
    failures: int
    seed: int


def result_row(scenario: ScenarioConfig, report: CoverageReport) -> ResultRow:
    """Flatten one coverage report against its scenario."""
    return ResultRow(
        scenario_id=report.scenario_id,
        method=report.method,
        coverage_type=report.coverage_type,
        n=scenario.n,
        p=scenario.p,
        sn=scenario.sn,
        residual_family=scenario.residual_family,
        covariance_kind=scenario.covariance,
        regression_fn=scenario.regression_fn,
        alpha=scenario.alpha,
        coverage=report.coverage,
        coverage_sd=report.coverage_sd,
        mean_length=report.mean_length,
        mc_outer=report.mc,
        mc_inner=report.mc_inner,
        failures=report.failures,
        seed=report.seed,
    )


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def write_results(rows, path) -> None:
    """CSV with the exact RESULT_FIELDS header order, UTF-8, LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            writer.writerow([_format_cell(getattr(row, name)) for name in RESULT_FIELDS])


def _parse_optional(raw: str, kind):
    return None if raw == "" else kind(raw)


def read_results(path):
    """Parse a results CSV back into ResultRow records."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"unexpected results header in {path}")
        for rec in reader:
            rows.append(
                ResultRow(
                    scenario_id=rec["scenario_id"],
                    method=rec["method"],
                    coverage_type=rec["coverage_type"],
                    n=int(rec["n"]),
                    p=int(rec["p"]),
                    sn=float(rec["sn"]),
                    residual_family=rec["residual_family"],
                    covariance_kind=rec["covariance_kind"],
                    regression_fn=rec["regression_fn"],
                    alpha=float(rec["alpha"]),
                    coverage=float(rec["coverage"]),
                    coverage_sd=_parse_optional(rec["coverage_sd"], float),
                    mean_length=float(rec["mean_length"]),
                    mc_outer=int(rec["mc_outer"]),
                    mc_inner=_parse_optional(rec["mc_inner"], int),
                    failures=int(rec["failures"]),
                    seed=int(rec["seed"]),
                )
            )
    return rows


@dataclass(frozen=True)
class RunConfig:
    """Parsed run document: scenarios plus global options."""

    scenarios: tuple
    seed: int = 0
    threads: int | None = None
    output: str | None = None


_GLOBAL_KEYS = {"seed", "threads", "output", "scenarios"}
_SCENARIO_KEYS = {
    f.name for f in fields(ScenarioConfig) if f.name not in ("scenario_id",)
}
_SCENARIO_KEY_ALIASES = {"covariance_kind": "covariance", "trees": "num_trees"}


def parse_config(path) -> RunConfig:
    """Load and validate a run-configuration document."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: top level must be an object")
    unknown = set(doc) - _GLOBAL_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown key {sorted(unknown)[0]!r}")
    raw_scenarios = doc.get("scenarios", [])
    if not isinstance(raw_scenarios, list):
        raise ValueError(f"{path}: 'scenarios' must be a list")
    scenarios = []
    for i, raw in enumerate(raw_scenarios):
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: scenario {i} must be an object")
        kwargs = {}
        for key, value in raw.items():
            name = _SCENARIO_KEY_ALIASES.get(key, key)
            if name not in _SCENARIO_KEYS:
                raise ValueError(f"{path}: scenario {i}: unknown key {key!r}")
            kwargs[name] = value
        if "methods" in kwargs:
            kwargs["methods"] = tuple(kwargs["methods"])
        try:
            scenario = ScenarioConfig(**kwargs).canonical()
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: scenario {i}: {exc}")
        scenarios.append(replace(scenario, scenario_id=f"s{i:03d}"))
    return RunConfig(
        scenarios=tuple(scenarios),
        seed=int(doc.get("seed", 0)),
        threads=doc.get("threads"),
        output=doc.get("output"),
    )


def read_dataset(path):
    """Numeric training CSV: header row, feature columns, response last."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row")
        if len(header) < 2:
            raise ValueError(f"{path}: need at least one feature and a response column")
        rows = []
        for i, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(
                    f"{path}: row {i}: expected {len(header)} columns, got {len(rec)}"
                )
            values = []
            for j, cell in enumerate(rec):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {i}, column {j + 1} ({header[j]}): "
                        f"not numeric: {cell!r}"
                    )
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    import numpy as np

    data = np.asarray(rows, dtype=np.float64)
    return data[:, :-1], data[:, -1], header
