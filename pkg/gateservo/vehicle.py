# gateservo/vehicle.py
#
# Kinematic drone model and the gate-navigation state machine.
#
# The low-level flight controller is abstracted to a first-order lag on
# world-frame velocity and yaw rate. The state machine mirrors the
# scripted circuit flown on the real vehicle:
#
#   Takeoff → GateNavigation → ForwardAndTurn → GateNavigation → …
#                    ↕
#                  Search
#
# Any phase may end in Done when the run terminates.

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gateservo.geometry import FeatureVec, Pose
from gateservo.servoing import ZERO_COMMAND, IbvsConfig, VelocityCommand
from gateservo.utils.common import wrap_angle, yaw_matrix

logger = logging.getLogger("gateservo.vehicle")

NavPhase = Literal["Takeoff", "GateNavigation", "ForwardAndTurn", "Search", "Done"]
NAV_PHASES: tuple[str, ...] = ("Takeoff", "GateNavigation", "ForwardAndTurn", "Search", "Done")

LEGAL_TRANSITIONS: frozenset[tuple[str, str]] = frozenset({
    ("Takeoff", "GateNavigation"),
    ("GateNavigation", "ForwardAndTurn"),
    ("GateNavigation", "Search"),
    ("Search", "GateNavigation"),
    ("ForwardAndTurn", "GateNavigation"),
})


def is_legal_transition(before: str, after: str) -> bool:
    if before == after:
        return True
    if after == "Done":
        return True
    return (before, after) in LEGAL_TRANSITIONS


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------
class VehicleConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    tau_v: float = Field(default=0.15, gt=0)
    tau_w: float = Field(default=0.1, gt=0)
    physics_dt: float = Field(default=0.01, gt=0)
    control_rate: float = Field(default=30.0, gt=0)

    @model_validator(mode="after")
    def _physics_faster_than_control(self) -> "VehicleConfig":
        if self.physics_dt > 1.0 / self.control_rate:
            raise ValueError(
                f"physics_dt ({self.physics_dt}) must not exceed the control period "
                f"1/control_rate ({1.0 / self.control_rate:.6g})"
            )
        return self

    @property
    def control_period(self) -> float:
        return 1.0 / self.control_rate

    def substeps(self) -> tuple[int, float]:
        """Physics sub-steps per control period and their (equal) length."""
        n = max(1, math.ceil(self.control_period / self.physics_dt - 1e-9))
        return n, self.control_period / n


@dataclass(eq=False)
class DroneState:
    position: np.ndarray
    yaw: float = 0.0
    v_world: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_rate: float = 0.0
    t: float = 0.0

    @classmethod
    def at_rest(cls, pose: Pose, t: float = 0.0) -> "DroneState":
        return cls(position=pose.array(), yaw=pose.yaw, t=t)

    @property
    def pose(self) -> Pose:
        return Pose(position=tuple(float(p) for p in self.position), yaw=self.yaw)

    @property
    def altitude(self) -> float:
        return float(self.position[2])

    def speed(self) -> float:
        return float(np.linalg.norm(self.v_world))

    def same_as(self, other: "DroneState") -> bool:
        return (
            np.array_equal(self.position, other.position)
            and self.yaw == other.yaw
            and np.array_equal(self.v_world, other.v_world)
            and self.yaw_rate == other.yaw_rate
            and self.t == other.t
        )


def step_dynamics(
    s: DroneState,
    cmd: VelocityCommand,
    cfg: VehicleConfig,
    dt: float | None = None,
) -> DroneState:
    """
    Advance one physics step of length dt (default cfg.physics_dt).

    Velocity and yaw rate relax exactly toward the command
    (x ← x + (1 − e^(−dt/τ))·(x_cmd − x)); position and yaw then integrate
    the updated rates. Altitude is floored at the ground plane.
    """
    dt = cfg.physics_dt if dt is None else dt
    a_v = -math.expm1(-dt / cfg.tau_v)
    a_w = -math.expm1(-dt / cfg.tau_w)

    target = yaw_matrix(s.yaw) @ np.asarray(cmd.v_body, dtype=float)
    v = s.v_world + a_v * (target - s.v_world)
    w = s.yaw_rate + a_w * (cmd.yaw_rate - s.yaw_rate)

    position = s.position + v * dt
    if position[2] < 0.0:
        position[2] = 0.0
        v[2] = max(v[2], 0.0)

    return DroneState(
        position=position,
        yaw=wrap_angle(s.yaw + w * dt),
        v_world=v,
        yaw_rate=w,
        t=s.t + dt,
    )


# ---------------------------------------------------------------------------
# Navigation state machine
# ---------------------------------------------------------------------------
class NavConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    takeoff_altitude: float = Field(default=1.0, gt=0)
    takeoff_speed: float = Field(default=0.5, gt=0)
    forward_distance: float = Field(default=1.0, ge=0)
    forward_speed: float = Field(default=0.8, gt=0)
    turn_angle: float = Field(default=math.pi, ge=0)
    turn_rate: float = Field(default=1.5, gt=0)


@dataclass(frozen=True)
class NavState:
    phase: NavPhase = "Takeoff"
    # Monotone counter of gates committed to; reduce modulo the gate count
    target_gate: int = 0
    committed_gate: int | None = None
    traveled: float = 0.0
    turned: float = 0.0


def nav_update(
    nav: NavState,
    s: DroneState,
    perception_out: FeatureVec,
    ibvs_out: tuple[VelocityCommand, float],
    cfg: NavConfig,
    ibvs_cfg: IbvsConfig | None = None,
    control_dt: float = 1.0 / 30.0,
) -> tuple[NavState, VelocityCommand]:
    """One control tick of the state machine: next state and the command to hold."""
    ibvs_cfg = ibvs_cfg or IbvsConfig()
    servo_cmd, err = ibvs_out
    forward = VelocityCommand((cfg.forward_speed, 0.0, 0.0), 0.0)

    if nav.phase == "Done":
        return nav, ZERO_COMMAND

    if nav.phase == "Takeoff":
        if s.altitude >= cfg.takeoff_altitude:
            return replace(nav, phase="GateNavigation"), servo_cmd
        return nav, VelocityCommand((0.0, 0.0, cfg.takeoff_speed), 0.0)

    if nav.phase == "GateNavigation":
        if not math.isfinite(err) or perception_out.n_visible < ibvs_cfg.min_visible_corners:
            return replace(nav, phase="Search"), VelocityCommand.search(ibvs_cfg.search_rate)
        if err <= ibvs_cfg.error_threshold_px:
            # Commit to the current gate and start the open-loop pass right away
            nxt = NavState(
                phase="ForwardAndTurn",
                target_gate=nav.target_gate + 1,
                committed_gate=nav.target_gate,
                traveled=cfg.forward_speed * control_dt,
                turned=0.0,
            )
            return nxt, forward
        return nav, servo_cmd

    if nav.phase == "ForwardAndTurn":
        if nav.traveled < cfg.forward_distance:
            return replace(nav, traveled=nav.traveled + cfg.forward_speed * control_dt), forward
        if nav.turned < cfg.turn_angle:
            turn = VelocityCommand((0.0, 0.0, 0.0), cfg.turn_rate)
            return replace(nav, turned=nav.turned + cfg.turn_rate * control_dt), turn
        done = NavState(phase="GateNavigation", target_gate=nav.target_gate)
        return done, servo_cmd

    if nav.phase == "Search":
        if math.isfinite(err) and perception_out.n_visible >= ibvs_cfg.min_visible_corners:
            return replace(nav, phase="GateNavigation"), servo_cmd
        return nav, VelocityCommand.search(ibvs_cfg.search_rate)

    raise ValueError(f"Unknown navigation phase '{nav.phase}'")


def finish(nav: NavState) -> NavState:
    """Terminal transition used when the run ends."""
    return replace(nav, phase="Done")
