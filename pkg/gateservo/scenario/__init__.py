from gateservo.scenario.models import ConditionSummary, RunMetrics, Scenario, TrajectoryLog
from gateservo.scenario.service import (
    moving_gate_experiment,
    orientation_experiment,
    run_batch,
    run_scenario,
)

__all__ = [
    "ConditionSummary",
    "RunMetrics",
    "Scenario",
    "TrajectoryLog",
    "moving_gate_experiment",
    "orientation_experiment",
    "run_batch",
    "run_scenario",
]
