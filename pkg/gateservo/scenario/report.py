# gateservo/scenario/report.py
#
# Artifact emission: trajectory CSV, metrics / batch JSON, aligned text
# tables. Everything is UTF-8; floats use repr() so the CSV is exact and
# locale-independent ('.' decimal separator, "inf" for the lost-gate sentinel).

import csv
import io
import json
from pathlib import Path

from rich.console import Console
from rich.table import Table

from gateservo.scenario.models import (
    TRAJECTORY_HEADER,
    BatchResult,
    ConditionSummary,
    RunMetrics,
    Scenario,
    TrajectoryLog,
)


def trajectory_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_HEADER)
    for row in log.rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def metrics_json(metrics: RunMetrics) -> str:
    return metrics.model_dump_json(indent=2)


def batch_json(batch: BatchResult) -> str:
    payload = {
        "name": batch.name,
        "kind": batch.kind,
        "conditions": [c.model_dump() for c in batch.conditions],
        "runs": [
            {"index": r.index, "condition": r.condition, "seed": r.seed, "metrics": r.metrics.model_dump()}
            for r in batch.runs
        ],
    }
    return json.dumps(payload, indent=2)


def _fmt(value, digits: int = 2) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _render(table: Table) -> str:
    buf = io.StringIO()
    Console(file=buf, width=120, color_system=None, force_terminal=False).print(table)
    return buf.getvalue()


def summary_table(conditions: list[ConditionSummary], title: str | None = None) -> str:
    """Aligned per-condition table: success rate, average/best gates, distance, time."""
    table = Table(title=title)
    for col in ("condition", "runs", "success", "gates avg", "gates best",
                "dist avg [m]", "dist best [m]", "time avg [s]", "time best [s]"):
        table.add_column(col, justify="left" if col == "condition" else "right")
    for c in conditions:
        table.add_row(
            c.condition,
            str(c.runs),
            f"{c.successes}/{c.runs} ({c.success_rate:.0%})",
            _fmt(c.gates_avg),
            str(c.gates_best),
            _fmt(c.distance_avg),
            _fmt(c.distance_best),
            _fmt(c.time_avg),
            _fmt(c.time_best),
        )
    return _render(table)


def run_summary(sc: Scenario, metrics: RunMetrics, log: TrajectoryLog) -> str:
    """Human-readable summary of one run."""
    lines = [
        f"scenario     {sc.name}",
        f"seed         {sc.seed}",
        f"perception   {sc.perception.kind}",
        f"outcome      {'CRASH: ' + (log.crash_reason or '?') if metrics.crashed else 'ok'}",
        f"gates passed {metrics.gates_passed}",
        f"distance     {metrics.distance:.2f} m",
        f"peak speed   {metrics.peak_speed:.2f} m/s",
        f"elapsed      {metrics.elapsed:.2f} s",
    ]
    if metrics.traversal_times:
        lines.append("traversals   " + ", ".join(f"{t:.2f}" for t in metrics.traversal_times))
    return "\n".join(lines) + "\n"


def rmse_table(breakdown: dict) -> str:
    table = Table(title=f"RMSE over {breakdown['n_samples']} samples")
    table.add_column("corner")
    table.add_column("RMSE [px]", justify="right")
    for name, value in breakdown["per_corner"].items():
        table.add_row(name, _fmt(value, 3))
    table.add_row("overall", _fmt(breakdown["overall"], 3))
    return _render(table)


def rf_table(trace: list[tuple[int, int]], layers) -> str:
    table = Table(title="receptive field")
    for col in ("layer", "kernel", "stride", "rf", "jump"):
        table.add_column(col, justify="right")
    for i, (layer, (rf, jump)) in enumerate(zip(layers, trace), start=1):
        table.add_row(str(i), str(layer.kernel), str(layer.stride), str(rf), str(jump))
    return _render(table)


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path
