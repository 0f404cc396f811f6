# gateservo/scenario/service.py
#
# Closed-loop engine and experiment protocols.
#
# Per control tick:
#   1. Project the target gate's corners from the current pose
#   2. Perceive (detector model + latency FIFO)
#   3. IBVS step against the frontal desired features
#   4. State-machine update → command held for the whole period
#   5. Physics sub-steps; every sub-step checks all gates for traversal /
#      frame strike, plus ground contact and room bounds
#
# Experiments fan out independent runs on a thread pool; results are
# always returned in run-index order.

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

from tqdm import tqdm

from gateservo.config import BATCH_WORKERS
from gateservo.geometry import MotionLaw, Pose, gate_axes, project_corners, traversal_check
from gateservo.perception import Perceiver
from gateservo.scenario.models import (
    BatchResult,
    ConditionSummary,
    LogRow,
    RunMetrics,
    RunRecord,
    Scenario,
    TrajectoryLog,
    orientation_label,
)
from gateservo.servoing import desired_features, ibvs_step
from gateservo.utils.common import polyline_length, yaw_matrix
from gateservo.vehicle import DroneState, NavState, finish, nav_update, step_dynamics

logger = logging.getLogger("gateservo.scenario")


def _row(s: DroneState, t: float, phase: str, err: float, n_visible: int, target: int) -> LogRow:
    return LogRow(
        t=t,
        x=float(s.position[0]), y=float(s.position[1]), z=float(s.position[2]),
        yaw=float(s.yaw),
        vx=float(s.v_world[0]), vy=float(s.v_world[1]), vz=float(s.v_world[2]),
        yaw_rate=float(s.yaw_rate),
        phase=phase,
        err_px=float(err),
        n_visible=int(n_visible),
        target_gate=int(target),
    )


# ---------------------------------------------------------------------------
# Single run
# ---------------------------------------------------------------------------
def run_scenario(sc: Scenario) -> tuple[RunMetrics, TrajectoryLog]:
    """Run the closed loop until the duration elapses, a crash, or stop_after_gates."""
    cam = sc.camera
    period = sc.vehicle.control_period
    n_ticks = max(1, math.ceil(sc.duration * sc.vehicle.control_rate - 1e-9))
    n_sub, sub_dt = sc.vehicle.substeps()
    n_gates = len(sc.gates)
    desired = [desired_features(g.side, sc.ibvs.desired_distance, cam) for g in sc.gates]

    state = DroneState.at_rest(sc.start_pose)
    nav = NavState()
    perceiver = Perceiver(sc.perception, sc.seed, cam.width)
    log = TrajectoryLog()

    traversal_times: list[float] = []
    peak_speed = 0.0
    crash_reason: Optional[str] = None
    last_err, last_visible, last_target = math.inf, 0, 0

    for k in range(n_ticks):
        t = k * period
        state.t = t
        target = nav.target_gate % n_gates
        truth = project_corners(state.pose, sc.gates[target], t, cam, sc.perception.projection)
        measured = perceiver.observe(truth)
        servo = ibvs_step(measured, desired[target], sc.ibvs, cam)

        prev_phase = nav.phase
        nav, cmd = nav_update(nav, state, measured, servo, sc.nav, sc.ibvs, period)
        if nav.phase != prev_phase:
            logger.debug("t=%.3f %s → %s (err %.2f px)", t, prev_phase, nav.phase, servo[1])
            log.events.append((t, f"{prev_phase}->{nav.phase}"))

        last_err, last_visible, last_target = servo[1], measured.n_visible, target
        log.append(_row(state, t, nav.phase, last_err, last_visible, target))

        # Gate credited for a traversal during this period
        if nav.phase == "ForwardAndTurn" and nav.committed_gate is not None:
            credit = nav.committed_gate % n_gates
        else:
            credit = nav.target_gate % n_gates

        for j in range(n_sub):
            ts, dt = t + (j + 1) * sub_dt, sub_dt
            # Last period is cut at the scenario duration
            if ts > sc.duration:
                ts, dt = sc.duration, sc.duration - state.t
                if dt <= 0.0:
                    break
            nxt = step_dynamics(state, cmd, sc.vehicle, dt)
            nxt.t = ts
            peak_speed = max(peak_speed, nxt.speed())

            for gi, gate in enumerate(sc.gates):
                event = traversal_check(state.position, nxt.position, gate, ts, sc.drone_radius)
                if event == "collided":
                    crash_reason = f"gate {gi} frame strike"
                elif event == "traversed" and gi == credit:
                    traversal_times.append(ts)
                    log.events.append((ts, f"traversed gate {gi}"))
                    logger.debug("t=%.3f traversed gate %d", ts, gi)

            if crash_reason is None and nav.phase != "Takeoff" and nxt.position[2] <= 0.0:
                crash_reason = "ground contact"
            if crash_reason is None and sc.room is not None and not sc.room.contains(nxt.position):
                crash_reason = "left the room"

            state = nxt
            if crash_reason is not None:
                break

        if crash_reason is not None:
            log.events.append((state.t, f"crash: {crash_reason}"))
            break
        if sc.stop_after_gates is not None and len(traversal_times) >= sc.stop_after_gates:
            break

    nav = finish(nav)
    log.append(_row(state, state.t, nav.phase, last_err, last_visible, last_target))
    log.crash_reason = crash_reason

    crashed = crash_reason is not None
    metrics = RunMetrics(
        gates_passed=len(traversal_times),
        distance=polyline_length(log.positions()),
        peak_speed=peak_speed,
        crashed=crashed,
        success=not crashed,
        elapsed=state.t,
        traversal_times=traversal_times,
    )
    logger.info(
        "run %s seed=%d: %s, %d gates, %.2f m in %.2f s",
        sc.name, sc.seed, "CRASH (" + crash_reason + ")" if crashed else "ok",
        metrics.gates_passed, metrics.distance, metrics.elapsed,
    )
    return metrics, log


# ---------------------------------------------------------------------------
# Scenario transforms
# ---------------------------------------------------------------------------
def with_seed(sc: Scenario, seed: int) -> Scenario:
    return sc.model_copy(update={"seed": seed % 2**64})


def with_motion(sc: Scenario, motion: MotionLaw) -> Scenario:
    """Same scenario with `motion` attached to every gate."""
    gates = [g.model_copy(update={"motion": motion}) for g in sc.gates]
    return sc.model_copy(update={"gates": gates})


def oriented_start(sc: Scenario, bearing_deg: float, distance: float | None = None) -> Scenario:
    """
    Place the drone `distance` m from the first gate along the relative
    bearing, facing the gate center, at the base start altitude.
    """
    distance = sc.experiment.approach_distance if distance is None else distance
    pose = sc.gates[0].pose_at(0.0)
    normal, _, _ = gate_axes(pose)
    theta = math.radians(bearing_deg)
    direction = yaw_matrix(theta) @ normal
    position = pose.array() - distance * direction
    position[2] = sc.start_pose.position[2]
    start = Pose(position=tuple(float(p) for p in position), yaw=pose.yaw + theta)
    return sc.model_copy(update={"start_pose": start})


def moving_gate_experiment(base: Scenario, motion: MotionLaw) -> tuple[RunMetrics, TrajectoryLog]:
    return run_scenario(with_motion(base, motion))


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------
Job = tuple[int, str, Scenario]


def _run_job(job: Job) -> RunRecord:
    index, condition, sc = job
    metrics, log = run_scenario(sc)
    return RunRecord(index=index, condition=condition, seed=sc.seed, metrics=metrics, log=log)


def run_jobs(
    jobs: Sequence[Job],
    workers: int = BATCH_WORKERS,
    progress: bool = False,
) -> list[RunRecord]:
    """Run independent scenarios in parallel; records come back in job order."""
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        records = list(tqdm(ex.map(_run_job, jobs), total=len(jobs), desc="runs", disable=not progress))
    logger.info("batch: %d runs on %d workers in %.2f s", len(jobs), workers, time.perf_counter() - t0)
    return records


def _summaries(records: list[RunRecord], conditions: list[str]) -> list[ConditionSummary]:
    return [
        ConditionSummary.from_records(c, [r for r in records if r.condition == c])
        for c in conditions
    ]


def orientation_jobs(base: Scenario, orientations: Sequence[float], repeats: int) -> list[Job]:
    if repeats < 1:
        raise ValueError(f"repeats must be ≥ 1, got {repeats}")
    base = base if base.stop_after_gates is not None else base.model_copy(update={"stop_after_gates": 1})
    jobs: list[Job] = []
    for deg in orientations:
        placed = oriented_start(base, deg)
        for i in range(repeats):
            jobs.append((len(jobs), orientation_label(deg), with_seed(placed, base.seed + i)))
    return jobs


def orientation_experiment(
    base: Scenario,
    orientations: Sequence[float] = (-45.0, 0.0, 45.0),
    repeats: int = 1,
    workers: int = BATCH_WORKERS,
) -> list[ConditionSummary]:
    """Success rate and first-traversal times per relative start bearing."""
    records = run_jobs(orientation_jobs(base, orientations, repeats), workers)
    return _summaries(records, [orientation_label(d) for d in orientations])


def repeat_jobs(base: Scenario, repeats: int, condition: str = "repeat") -> list[Job]:
    if repeats < 1:
        raise ValueError(f"repeats must be ≥ 1, got {repeats}")
    return [(i, condition, with_seed(base, base.seed + i)) for i in range(repeats)]


def run_batch(
    base: Scenario,
    repeats: int,
    workers: int = BATCH_WORKERS,
    progress: bool = False,
    on_record: Optional[Callable[[RunRecord], None]] = None,
) -> BatchResult:
    """Dispatch on base.experiment.kind and summarize per condition."""
    exp = base.experiment
    if exp.kind == "orientation":
        jobs = orientation_jobs(base, exp.orientations_deg, repeats)
        conditions = [orientation_label(d) for d in exp.orientations_deg]
    elif exp.kind == "moving_gate":
        if exp.motion is None:
            raise ValueError("experiment.kind 'moving_gate' needs experiment.motion")
        jobs = repeat_jobs(with_motion(base, exp.motion), repeats, "moving_gate")
        conditions = ["moving_gate"]
    else:
        jobs = repeat_jobs(base, repeats)
        conditions = ["repeat"]

    records = run_jobs(jobs, workers, progress)
    if on_record is not None:
        for r in records:
            on_record(r)
    return BatchResult(name=base.name, kind=exp.kind, conditions=_summaries(records, conditions), runs=records)

