"""Command-line interface: fit a forest, query intervals, run simulations.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import os
import sys

from .forest import ForestConfig, build_forest, load_forest, oob_residuals, predict_forest, save_forest
from .intervals import (
    NP_EQ,
    PRF,
    PRF_MCOR,
    PRF_W,
    QRF,
    nonparametric_interval,
    parametric_interval,
    qrf_interval,
)
from .reporting import parse_config, read_dataset, result_row, write_results
from .simulation import run_grid
from .variance import sigma2_corrected, sigma2_simple, sigma2_weighted

_CLI_METHODS = (PRF, PRF_MCOR, PRF_W, NP_EQ, QRF)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oob-bands", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="train a forest and save it as JSON")
    fit.add_argument("--data", required=True, help="training CSV (response last)")
    fit.add_argument("--trees", type=int, default=500, help="number of trees")
    fit.add_argument("--mtry", type=int, default=None, help="features tried per split")
    fit.add_argument("--min-node-size", type=int, default=5)
    fit.add_argument("--resample", choices=("bootstrap", "subsample"), default="bootstrap")
    fit.add_argument("--resample-count", type=int, default=None)
    fit.add_argument("--max-terminal-nodes", type=int, default=None)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="output model path (JSON)")

    interval = sub.add_parser("interval", help="prediction interval at a point")
    interval.add_argument("--model", required=True, help="model JSON from `fit`")
    interval.add_argument("--data", required=True, help="the training CSV")
    interval.add_argument("--x", required=True, help="comma-separated feature values")
    interval.add_argument("--alpha", type=float, default=0.05)
    interval.add_argument("--method", choices=_CLI_METHODS, default=PRF)

    simulate = sub.add_parser("simulate", help="run a coverage simulation grid")
    simulate.add_argument("--config", required=True, help="run configuration JSON")
    simulate.add_argument("--out", default=None, help="results CSV path")
    simulate.add_argument("--threads", type=int, default=None)

    return parser


def _cmd_fit(args) -> int:
    X, y, _header = read_dataset(args.data)
    config = ForestConfig(
        num_trees=args.trees,
        mtry=args.mtry,
        resample_count=args.resample_count,
        resample_mode=args.resample,
        min_node_size=args.min_node_size,
        max_terminal_nodes=args.max_terminal_nodes,
        seed=args.seed,
    )
    forest = build_forest((X, y), config)
    save_forest(forest, args.out)
    print(f"saved {forest.num_trees}-tree model for n={forest.n}, p={forest.p} to {args.out}")
    return 0


def _parse_point(raw: str):
    try:
        return [float(part) for part in raw.split(",")]
    except ValueError:
        raise UsageError(f"--x must be comma-separated numbers, got {raw!r}")


def _cmd_interval(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise UsageError(f"alpha must be in (0, 1), got {args.alpha}")
    x0 = _parse_point(args.x)
    forest = load_forest(args.model)
    X, y, _header = read_dataset(args.data)
    if X.shape != (forest.n, forest.p):
        raise ValueError(
            f"data shape {X.shape} does not match the model "
            f"(n={forest.n}, p={forest.p})"
        )
    point = predict_forest(forest, x0)
    if args.method == QRF:
        iv = qrf_interval(forest, (X, y), x0, args.alpha)
    else:
        residuals = oob_residuals(forest, (X, y))
        if args.method == NP_EQ:
            iv = nonparametric_interval(point, residuals, args.alpha)
        else:
            simple = sigma2_simple(residuals)
            if args.method == PRF:
                est = simple
            else:
                corrected = sigma2_corrected(
                    residuals, residuals.oob_prediction, forest.num_trees, forest.n
                )
                est = corrected if args.method == PRF_MCOR else sigma2_weighted(
                    simple, corrected, 0.5
                )
            iv = parametric_interval(point, est, args.alpha)
    print(f"{iv.lower!r},{iv.upper!r},{iv.point_prediction!r}")
    return 0


def _cmd_simulate(args) -> int:
    config = parse_config(args.config)
    out = args.out or config.output
    if out is None:
        raise UsageError("no output path: pass --out or set 'output' in the config")
    threads = args.threads
    if threads is None:
        env = os.environ.get("OOB_BANDS_THREADS", "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise UsageError(f"OOB_BANDS_THREADS must be an integer, got {env!r}")
    if threads is None:
        threads = config.threads if config.threads is not None else 1
    if threads < 1:
        raise UsageError("threads must be >= 1")
    by_id = {s.scenario_id: s for s in config.scenarios}
    reports = run_grid(list(config.scenarios), master_seed=config.seed, threads=threads)
    rows = [result_row(by_id[r.scenario_id], r) for r in reports]
    write_results(rows, out)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


_COMMANDS = {"fit": _cmd_fit, "interval": _cmd_interval, "simulate": _cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
