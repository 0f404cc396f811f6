# gateservo/cli.py
#
# Command-line surface. Thin shell over the library:
#
#   run        one scenario  → trajectory CSV, metrics JSON, text summary
#   batch      repeated / orientation / moving-gate runs → per-run files + summary table
#   eval-rmse  offline RMSE of a prediction dataset, overall + per corner
#   rf         receptive field of a conv stack given as "kernel,stride" pairs
#
# Exit codes: 0 ok, 1 config / input error, 2 crash (run only), 3 internal error.

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from pydantic import BaseModel, ValidationError

from gateservo.config import BATCH_WORKERS, LOG_FORMAT, OUT_DIR, log_level_name
from gateservo.perception import load_rmse_dataset, parse_layers, receptive_field_trace, rmse_breakdown
from gateservo.scenario.models import BatchResult, RunMetrics, RunRecord, Scenario
from gateservo.scenario.report import (
    batch_json,
    metrics_json,
    rf_table,
    rmse_table,
    run_summary,
    summary_table,
    trajectory_csv,
    write_text,
)
from gateservo.scenario.service import run_batch, run_scenario

logger = logging.getLogger("gateservo.cli")

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_CRASH = 2
EXIT_INTERNAL_ERROR = 3


class RunReport(BaseModel):
    name: str
    seed: int
    metrics: RunMetrics
    artifacts: dict[str, str]
    runtime_s: float


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------
def load_scenario(
    config_path: str | Path,
    seed: Optional[int] = None,
    duration: Optional[float] = None,
) -> Scenario:
    """Read + validate a scenario file; overrides go through validation too."""
    sc = Scenario.from_file(config_path)
    overrides = {k: v for k, v in (("seed", seed), ("duration", duration)) if v is not None}
    if not overrides:
        return sc
    return Scenario.model_validate({**sc.model_dump(by_alias=True), **overrides})


def _describe(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        parts = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            parts.append(f"{loc}: {err['msg']}")
        return "invalid scenario: " + "; ".join(parts)
    if isinstance(exc, FileNotFoundError):
        return f"config file not found: {exc.filename}"
    if isinstance(exc, json.JSONDecodeError):
        return f"config is not valid JSON: {exc}"
    return str(exc)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_run(
    config_path: str | Path,
    seed: Optional[int] = None,
    out_dir: str | Path = OUT_DIR,
    duration: Optional[float] = None,
) -> RunReport:
    sc = load_scenario(config_path, seed, duration)
    out = Path(out_dir)

    t0 = time.perf_counter()
    metrics, log = run_scenario(sc)
    runtime = time.perf_counter() - t0

    artifacts = {
        "trajectory": write_text(out / f"{sc.name}_trajectory.csv", trajectory_csv(log)),
        "metrics": write_text(out / f"{sc.name}_metrics.json", metrics_json(metrics)),
        "summary": write_text(out / f"{sc.name}_summary.txt", run_summary(sc, metrics, log)),
    }
    return RunReport(
        name=sc.name,
        seed=sc.seed,
        metrics=metrics,
        artifacts={k: str(v) for k, v in artifacts.items()},
        runtime_s=runtime,
    )


def cmd_batch(
    config_path: str | Path,
    repeats: int,
    out_dir: str | Path = OUT_DIR,
    seed: Optional[int] = None,
    duration: Optional[float] = None,
    workers: int = BATCH_WORKERS,
    progress: bool = False,
) -> BatchResult:
    if repeats < 1:
        raise ValueError(f"--repeats must be ≥ 1, got {repeats}")
    sc = load_scenario(config_path, seed, duration)
    out = Path(out_dir)

    def emit(record: RunRecord) -> None:
        stem = f"{sc.name}_run{record.index:03d}"
        write_text(out / f"{stem}_trajectory.csv", trajectory_csv(record.log))
        write_text(out / f"{stem}_metrics.json", metrics_json(record.metrics))

    batch = run_batch(sc, repeats, workers, progress=progress, on_record=emit)
    write_text(out / f"{sc.name}_batch.json", batch_json(batch))
    write_text(out / f"{sc.name}_batch.txt", summary_table(batch.conditions, title=sc.name))
    return batch


def cmd_eval_rmse(dataset_path: str | Path) -> dict:
    truth, pred, visible = load_rmse_dataset(dataset_path)
    return rmse_breakdown(truth, pred, visible)


def cmd_rf(layers_spec: str | Sequence[str]) -> tuple[int, list[tuple[int, int]], list]:
    layers = parse_layers(layers_spec)
    trace = receptive_field_trace(layers)
    return trace[-1][0], trace, layers


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gateservo", description="Closed-loop IBVS gate-navigation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out-dir", default=OUT_DIR)
    p_run.add_argument("--duration", type=float, default=None, help="override scenario duration [s]")

    p_batch = sub.add_parser("batch", help="repeated runs / experiment protocol")
    p_batch.add_argument("--config", required=True)
    p_batch.add_argument("--repeats", type=int, default=5)
    p_batch.add_argument("--seed", type=int, default=None)
    p_batch.add_argument("--out-dir", default=OUT_DIR)
    p_batch.add_argument("--duration", type=float, default=None)
    p_batch.add_argument("--workers", type=int, default=BATCH_WORKERS)
    p_batch.add_argument("--progress", action="store_true", help="show a progress bar")

    p_rmse = sub.add_parser("eval-rmse", help="RMSE of a corner-prediction dataset")
    p_rmse.add_argument("dataset")
    p_rmse.add_argument("--json", action="store_true", help="print the breakdown as JSON")

    p_rf = sub.add_parser("rf", help="receptive field of kernel,stride layers")
    p_rf.add_argument("layers", nargs="+", help='e.g. 3,1 2,2 3,1')
    p_rf.add_argument("--trace", action="store_true", help="print the per-layer table")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=log_level_name(), format=LOG_FORMAT)

    try:
        if args.command == "run":
            report = cmd_run(args.config, args.seed, args.out_dir, args.duration)
            print(Path(report.artifacts["summary"]).read_text(encoding="utf-8"), end="")
            return EXIT_CRASH if report.metrics.crashed else EXIT_OK

        if args.command == "batch":
            batch = cmd_batch(
                args.config, args.repeats, args.out_dir, args.seed, args.duration,
                args.workers, args.progress,
            )
            print(summary_table(batch.conditions, title=batch.name), end="")
            return EXIT_OK

        if args.command == "eval-rmse":
            breakdown = cmd_eval_rmse(args.dataset)
            if args.json:
                print(json.dumps(breakdown, indent=2))
            else:
                print(rmse_table(breakdown), end="")
            return EXIT_OK

        if args.command == "rf":
            rf, trace, layers = cmd_rf(args.layers)
            if args.trace:
                print(rf_table(trace, layers), end="")
            print(rf)
            return EXIT_OK

    except (ValueError, OSError) as e:
        # ValidationError, DatasetFormatError and layer parse errors are ValueErrors
        print(f"gateservo {args.command}: {_describe(e)}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_INTERNAL_ERROR

    return EXIT_CONFIG_ERROR
