# gateservo/scenario/models.py

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gateservo.geometry import DRONE_RADIUS, CameraModel, GateSpec, MotionLaw, Pose, Room
from gateservo.perception import PerceptionConfig
from gateservo.servoing import IbvsConfig
from gateservo.vehicle import NavConfig, VehicleConfig

ExperimentKind = Literal["repeat", "orientation", "moving_gate"]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    kind: ExperimentKind = "repeat"
    orientations_deg: list[float] = Field(default_factory=lambda: [-45.0, 0.0, 45.0], min_length=1)
    # Start distance from the first gate along each bearing
    approach_distance: float = Field(default=2.0, gt=0)
    motion: Optional[MotionLaw] = None


class Scenario(BaseModel):
    """Everything a run needs; a run is a pure function of this object."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False, populate_by_name=True)

    schema_version: Literal["gateservo/1"] = Field(..., alias="schema")
    name: str = Field(default="scenario", min_length=1, max_length=120, pattern=r"^[A-Za-z0-9_.-]+$")
    seed: int = Field(default=0, ge=0, lt=2**64)
    gates: list[GateSpec] = Field(..., min_length=1)
    start_pose: Pose = Field(default_factory=Pose)
    duration: float = Field(..., gt=0)

    camera: CameraModel = Field(default_factory=CameraModel)
    perception: PerceptionConfig = Field(default_factory=PerceptionConfig)
    ibvs: IbvsConfig = Field(default_factory=IbvsConfig)
    vehicle: VehicleConfig = Field(default_factory=VehicleConfig)
    nav: NavConfig = Field(default_factory=NavConfig)

    drone_radius: float = Field(default=DRONE_RADIUS, ge=0)
    stop_after_gates: Optional[int] = Field(default=None, ge=1)
    room: Optional[Room] = None
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)

    @model_validator(mode="after")
    def _open_loop_within_clamps(self) -> "Scenario":
        if self.nav.forward_speed > self.ibvs.max_linear_speed:
            raise ValueError("nav.forward_speed exceeds ibvs.max_linear_speed")
        if self.nav.takeoff_speed > self.ibvs.max_linear_speed:
            raise ValueError("nav.takeoff_speed exceeds ibvs.max_linear_speed")
        if self.nav.turn_rate > self.ibvs.max_yaw_rate:
            raise ValueError("nav.turn_rate exceeds ibvs.max_yaw_rate")
        if self.ibvs.search_rate > self.ibvs.max_yaw_rate:
            raise ValueError("ibvs.search_rate exceeds ibvs.max_yaw_rate")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        with open(path, encoding="utf-8") as f:
            return cls.model_validate(json.load(f))

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


class RunMetrics(BaseModel):
    gates_passed: int = Field(ge=0)
    distance: float = Field(ge=0)
    peak_speed: float = Field(ge=0)
    crashed: bool
    success: bool
    elapsed: float = Field(ge=0)
    traversal_times: list[float] = Field(default_factory=list)


class LogRow(NamedTuple):
    t: float
    x: float
    y: float
    z: float
    yaw: float
    vx: float
    vy: float
    vz: float
    yaw_rate: float
    phase: str
    err_px: float
    n_visible: int
    target_gate: int


TRAJECTORY_HEADER: tuple[str, ...] = LogRow._fields


@dataclass
class TrajectoryLog:
    rows: list[LogRow] = field(default_factory=list)
    # (t, description) of traversals, crashes and phase changes
    events: list[tuple[float, str]] = field(default_factory=list)
    crash_reason: Optional[str] = None

    def append(self, row: LogRow) -> None:
        if self.rows and row.t <= self.rows[-1].t:
            raise ValueError(f"log times must increase: {row.t} after {self.rows[-1].t}")
        self.rows.append(row)

    def positions(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, 3))
        return np.array([(r.x, r.y, r.z) for r in self.rows])

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class RunRecord:
    """One run of a batch, in run-index order."""

    index: int
    condition: str
    seed: int
    metrics: RunMetrics
    log: TrajectoryLog

    @property
    def counts_as_success(self) -> bool:
        return self.metrics.success and self.metrics.gates_passed > 0

    @property
    def first_traversal(self) -> Optional[float]:
        return self.metrics.traversal_times[0] if self.metrics.traversal_times else None


class ConditionSummary(BaseModel):
    condition: str
    runs: int
    successes: int
    success_rate: float
    gates_avg: float
    gates_best: int
    distance_avg: float
    distance_best: float
    time_avg: Optional[float] = None
    time_best: Optional[float] = None

    @classmethod
    def from_records(cls, condition: str, records: list[RunRecord]) -> "ConditionSummary":
        gates = [r.metrics.gates_passed for r in records]
        dists = [r.metrics.distance for r in records]
        times = [r.first_traversal for r in records if r.first_traversal is not None]
        successes = sum(r.counts_as_success for r in records)
        return cls(
            condition=condition,
            runs=len(records),
            successes=successes,
            success_rate=successes / len(records),
            gates_avg=float(np.mean(gates)),
            gates_best=max(gates),
            distance_avg=float(np.mean(dists)),
            distance_best=max(dists),
            time_avg=float(np.mean(times)) if times else None,
            time_best=min(times) if times else None,
        )


@dataclass
class BatchResult:
    name: str
    kind: ExperimentKind
    conditions: list[ConditionSummary]
    runs: list[RunRecord]


def orientation_label(deg: float) -> str:
    return f"{deg:g}deg"
