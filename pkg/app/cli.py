"""
Command-line front end.

    python -m app.cli simulate --dist irregular-123 --g 1.4 --snr 8
    python -m app.cli sweep-load --config configs/example.yaml --out load.csv
    python -m app.cli example

Tables go to stdout (or --out) as CSV with 6 significant digits; logs go to
stderr. Exit codes: 0 success, 1 runtime failure, 2 configuration or usage
error.
"""
import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

import pandas as pd

from app.config import settings
from app.models.schemas import DecodeMode, MAX_SEED
from app.services.experiment_config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    load_experiment_config,
)
from app.services.montecarlo import (
    DEFAULT_SCHEMES,
    compare_schemes,
    estimate,
    spectral_sweep,
    sweep_load,
    sweep_snr,
)
from app.services.optimizer import optimize
from app.services.per_model import DEFAULT_ERASURE_THRESHOLD, PerTableError, parametric_table, write_per_table
from app.services.worked_example import format_run, run_both

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
FLOAT_FORMAT = "%.6g"
ESTIMATE_COLUMNS = ["g", "snr_db", "plr", "plr_ci95", "throughput", "trials", "seed"]


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty grid")
    return values


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64), got {value}")
    return value


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file")
    common.add_argument("--seed", type=_seed, help="master seed (unsigned 64-bit)")
    common.add_argument("--trials", type=int, help="frames per point")
    common.add_argument("--per-table", dest="per_table", action="append",
                        help="PER table file (repeatable)")
    common.add_argument("--per-source", dest="per_source",
                        choices=["parametric", "anchors", "collision", "ideal", "files"])
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--snr", type=float, help="Es/N0 in dB")
    common.add_argument("--g", type=float, help="normalized load")
    common.add_argument("--dist", help="preset name or d1:p1,d2:p2,...")
    common.add_argument("--mode", choices=[m.value for m in DecodeMode])
    common.add_argument("--n-slots", dest="n_slots", type=int, help="slots per frame")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="musca-sim",
        description="Monte Carlo simulator for slotted random access with SIC",
    )
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="one (load, SNR) point")

    p = sub.add_parser("sweep-load", parents=[common], help="throughput/PLR versus load")
    p.add_argument("--g-values", dest="g_values", type=_float_list)

    p = sub.add_parser("sweep-snr", parents=[common], help="SNR x load grid with per-SNR peaks")
    p.add_argument("--g-values", dest="g_values", type=_float_list)
    p.add_argument("--snr-values", dest="snr_values", type=_float_list)

    p = sub.add_parser("optimize", parents=[common], help="grid search over degree distributions")
    p.add_argument("--degrees", type=_int_list)
    p.add_argument("--step", type=float)

    sub.add_parser("example", parents=[common], help="decode the four-user, three-slot scenario")

    p = sub.add_parser("compare", parents=[common], help="sa, crdsa-3, musca-3 and irregular musca")
    p.add_argument("--g-values", dest="g_values", type=_float_list)

    p = sub.add_parser("spectral", parents=[common], help="peak throughput and S versus SNR")
    p.add_argument("--g-values", dest="g_values", type=_float_list)
    p.add_argument("--snr-values", dest="snr_values", type=_float_list)

    p = sub.add_parser("per-table", parents=[common], help="write the parametric PER table")
    p.add_argument("--snr-values", dest="snr_values", type=_float_list)
    p.add_argument("--max-degree", dest="max_degree", type=int, default=3)
    return parser


def _emit(frame: pd.DataFrame, out: Optional[str]) -> None:
    if out:
        frame.to_csv(out, index=False, float_format=FLOAT_FORMAT)
        logger.info("Wrote %d rows to %s", len(frame), out)
    else:
        sys.stdout.write(frame.to_csv(index=False, float_format=FLOAT_FORMAT))


def _estimate_row(result) -> Dict[str, object]:
    return {
        "g": result.g,
        "snr_db": result.snr_db,
        "plr": result.plr,
        "plr_ci95": result.plr_ci95,
        "throughput": result.throughput,
        "trials": result.trials_run,
        "seed": result.master_seed,
    }


def _g_values(config: ExperimentConfig) -> List[float]:
    values = config.sweep.resolved_g_values()
    if not values:
        raise ConfigError("empty load grid: set sweep.g_values, sweep.g_start/g_stop/g_step or --g-values")
    return values


def _snr_values(config: ExperimentConfig) -> List[float]:
    return config.sweep.snr_values or [config.plan.snr_db]


def cmd_simulate(config: ExperimentConfig, args) -> int:
    plan = config.trial_plan()
    result = estimate(plan, config.per_table(), args.workers)
    _emit(pd.DataFrame([_estimate_row(result)], columns=ESTIMATE_COLUMNS), config.output.out)
    return EXIT_OK


def cmd_sweep_load(config: ExperimentConfig, args) -> int:
    g_values = _g_values(config)
    results = sweep_load(config.trial_plan(), g_values, config.per_table(), args.workers)
    _emit(pd.DataFrame([_estimate_row(r) for r in results], columns=ESTIMATE_COLUMNS), config.output.out)
    return EXIT_OK


def cmd_sweep_snr(config: ExperimentConfig, args) -> int:
    g_values = _g_values(config)
    snr_values = _snr_values(config)
    sweep = sweep_snr(config.trial_plan(), snr_values, g_values, config.per_table(snr_values), args.workers)
    rows = []
    for row, best in zip(sweep.rows, sweep.peaks):
        for result in row:
            rows.append({**_estimate_row(result), "peak": int(result is best)})
    _emit(pd.DataFrame(rows, columns=ESTIMATE_COLUMNS + ["peak"]), config.output.out)
    return EXIT_OK


def cmd_optimize(config: ExperimentConfig, args) -> int:
    spec = config.search_spec()
    outcome = optimize(spec, config.per_table(), args.workers)
    rows = []
    for candidate in outcome.ranking:
        row = {f"p{d}": candidate.dist.probability(d) for d in spec.degrees}
        row.update(
            peak_T=candidate.peak_throughput,
            peak_G=candidate.peak_g,
            mean_degree=candidate.mean_degree,
            rank=candidate.rank,
        )
        rows.append(row)
    columns = [f"p{d}" for d in spec.degrees] + ["peak_T", "peak_G", "mean_degree", "rank"]
    _emit(pd.DataFrame(rows, columns=columns), config.output.out)
    logger.info("Best distribution %s with peak T=%.4g", outcome.best.label(), outcome.peak_throughput)
    return EXIT_OK


def cmd_example(config: ExperimentConfig, args) -> int:
    runs = run_both(config.plan.seed)
    lines = [line for run in runs for line in format_run(run)]
    text = "\n".join(lines) + "\n"
    if config.output.out:
        with open(config.output.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if runs[0].matches_reference else EXIT_RUNTIME


def cmd_compare(config: ExperimentConfig, args) -> int:
    g_values = _g_values(config)
    results = compare_schemes(
        g_values,
        config.per_table(),
        n_slots=config.plan.n_slots,
        snr_db=config.plan.snr_db,
        trials=config.plan.trials,
        master_seed=config.plan.seed,
        policy=config.policy,
        workers=args.workers,
    )
    rows = []
    for name, sweep in results.items():
        mode, preset = DEFAULT_SCHEMES[name]
        for result in sweep:
            rows.append({"scheme": name, "mode": mode.value, "dist": preset, **_estimate_row(result)})
    _emit(pd.DataFrame(rows, columns=["scheme", "mode", "dist"] + ESTIMATE_COLUMNS), config.output.out)
    return EXIT_OK


def cmd_spectral(config: ExperimentConfig, args) -> int:
    g_values = _g_values(config)
    snr_values = _snr_values(config)
    points = spectral_sweep(config.trial_plan(), snr_values, g_values, config.per_table(snr_values), args.workers)
    rows = [
        {
            "snr_db": p.snr_db,
            "peak_T": p.peak_throughput,
            "peak_G": p.peak_g,
            "spectral_efficiency": p.spectral_efficiency,
            "qpsk_capacity": p.qpsk_capacity,
        }
        for p in points
    ]
    _emit(pd.DataFrame(rows), config.output.out)
    return EXIT_OK


def cmd_per_table(config: ExperimentConfig, args) -> int:
    snr_values = _snr_values(config)
    threshold = config.per.erasure_threshold
    if threshold is None:
        threshold = DEFAULT_ERASURE_THRESHOLD
    try:
        table = parametric_table(snr_values, max_degree=args.max_degree, erasure_threshold=threshold)
    except PerTableError as e:
        raise ConfigError(str(e)) from e
    comments = [
        "Parametric PER model: logistic in the per-burst information margin,",
        "fitted through the 5 dB anchors of each code family.",
    ]
    if config.output.out:
        write_per_table(table, config.output.out, comments=comments)
    else:
        for comment in comments:
            sys.stdout.write(f"# {comment}\n")
        rows = [
            {"code_id": c, "snr_db": s, "config": k.to_field(), "per": v}
            for (c, s, k), v in table.items()
        ]
        sys.stdout.write(pd.DataFrame(rows).to_csv(index=False, float_format=FLOAT_FORMAT))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], int]] = {
    "simulate": cmd_simulate,
    "sweep-load": cmd_sweep_load,
    "sweep-snr": cmd_sweep_snr,
    "optimize": cmd_optimize,
    "example": cmd_example,
    "compare": cmd_compare,
    "spectral": cmd_spectral,
    "per-table": cmd_per_table,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        config = apply_overrides(load_experiment_config(args.config), vars(args))
        return COMMANDS[args.command](config, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
