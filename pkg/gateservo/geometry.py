# gateservo/geometry.py
#
# World / body / camera frame math and pinhole projection of gate corners.
# This is the simulator's ground-truth generator: every "detector" in
# perception.py starts from what project_corners() returns.
#
# Frames:
#   world   : x, y horizontal, z up
#   body    : forward-left-up, attached at the drone position, rotated by yaw
#   camera  : z forward (body x), x right (body −y), y down (body −z);
#             body-fixed, zero mounting offset

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gateservo.utils.common import wrap_angle, yaw_matrix

ProjectionMode = Literal["extrapolated", "clamped"]
TraversalEvent = Literal["none", "traversed", "collided"]

CORNER_NAMES: tuple[str, ...] = ("TL", "TR", "BR", "BL")

# Crazyflie-scale body radius used to shrink the gate opening
DRONE_RADIUS = 0.06


# ---------------------------------------------------------------------------
# Poses + static models
# ---------------------------------------------------------------------------
class Pose(BaseModel):
    """Rigid position + yaw in the world frame; yaw kept in (−π, π]."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    @field_validator("yaw")
    @classmethod
    def _normalize_yaw(cls, v: float) -> float:
        return wrap_angle(v)

    def array(self) -> np.ndarray:
        return np.array(self.position, dtype=float)


class CameraModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    fx: float = Field(default=80.0, gt=0)
    fy: float = Field(default=80.0, gt=0)
    cx: float = 80.0
    cy: float = 80.0
    width: int = Field(default=160, gt=0)
    height: int = Field(default=160, gt=0)
    # Visibility cutoff in front of the lens
    min_depth: float = Field(default=0.05, gt=0)

    @model_validator(mode="after")
    def _principal_point_inside(self) -> "CameraModel":
        if not 0 <= self.cx < self.width:
            raise ValueError(f"cx must lie in [0, width): got cx={self.cx}, width={self.width}")
        if not 0 <= self.cy < self.height:
            raise ValueError(f"cy must lie in [0, height): got cy={self.cy}, height={self.height}")
        return self


class MotionLaw(BaseModel):
    """Sinusoidal gate displacement: axis · amplitude · sin(2πt/period + phase)."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    amplitude: float = Field(default=0.0, ge=0)
    period: float = Field(default=10.0, gt=0)
    phase: float = 0.0

    @field_validator("axis")
    @classmethod
    def _unit_axis(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        norm = math.sqrt(sum(c * c for c in v))
        if norm == 0.0:
            raise ValueError("axis must be a non-zero vector")
        return (v[0] / norm, v[1] / norm, v[2] / norm)

    def offset(self, t: float) -> np.ndarray:
        s = self.amplitude * math.sin(2.0 * math.pi * t / self.period + self.phase)
        return np.array(self.axis) * s


class GateSpec(BaseModel):
    """
    Square gate. The pose is the opening's center; the gate normal points
    along the pose yaw. Corner order TL, TR, BR, BL is defined as seen by a
    viewer on whichever side of the plane the drone currently is.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    pose: Pose
    side: float = Field(default=1.0, gt=0)
    frame_band: float = Field(default=0.05, ge=0)
    motion: MotionLaw | None = None

    def pose_at(self, t: float) -> Pose:
        if self.motion is None or self.motion.amplitude == 0.0:
            return self.pose
        moved = self.pose.array() + self.motion.offset(t)
        return Pose(position=tuple(moved), yaw=self.pose.yaw)


class Room(BaseModel):
    """Axis-aligned flight volume; leaving it counts as a wall strike."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    @model_validator(mode="after")
    def _ordered(self) -> "Room":
        if any(lo >= hi for lo, hi in zip(self.min_corner, self.max_corner)):
            raise ValueError("room min_corner must be strictly below max_corner on every axis")
        return self

    def contains(self, point: np.ndarray) -> bool:
        return all(lo <= p <= hi for lo, p, hi in zip(self.min_corner, point, self.max_corner))


# ---------------------------------------------------------------------------
# FeatureVec
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FeatureVec:
    """8 pixel coordinates (u1, v1, …, u4, v4) for TL, TR, BR, BL + visibility."""

    coords: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(8)
        visible = np.array(self.visible, dtype=bool).reshape(4)
        coords.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "visible", visible)

    @classmethod
    def from_corners(cls, uv, visible=None) -> "FeatureVec":
        uv = np.asarray(uv, dtype=float).reshape(4, 2)
        if visible is None:
            visible = np.ones(4, dtype=bool)
        return cls(coords=uv.reshape(8), visible=visible)

    @property
    def n_visible(self) -> int:
        return int(np.count_nonzero(self.visible))

    @property
    def uv(self) -> np.ndarray:
        return self.coords.reshape(4, 2)

    def coord_mask(self) -> np.ndarray:
        """Per-coordinate visibility (length 8)."""
        return np.repeat(self.visible, 2)

    def with_coords(self, coords) -> "FeatureVec":
        return FeatureVec(coords=coords, visible=self.visible)

    def same_as(self, other: "FeatureVec") -> bool:
        return bool(
            np.array_equal(self.coords, other.coords)
            and np.array_equal(self.visible, other.visible)
        )


# ---------------------------------------------------------------------------
# Frame transforms
# ---------------------------------------------------------------------------
def _to_camera(drone_pose: Pose, points: np.ndarray) -> np.ndarray:
    d = np.atleast_2d(points) - np.asarray(drone_pose.position)
    c, s = math.cos(drone_pose.yaw), math.sin(drone_pose.yaw)
    bx = c * d[:, 0] + s * d[:, 1]
    by = -s * d[:, 0] + c * d[:, 1]
    bz = d[:, 2]
    return np.stack([-by, -bz, bx], axis=1)


def world_to_camera(drone_pose: Pose, point, cam: CameraModel | None = None) -> np.ndarray:
    """Express a world point in the camera frame of a drone at drone_pose."""
    return _to_camera(drone_pose, np.asarray(point, dtype=float))[0]


def camera_to_world(drone_pose: Pose, point_cam, cam: CameraModel | None = None) -> np.ndarray:
    xc, yc, zc = np.asarray(point_cam, dtype=float)
    body = np.array([zc, -xc, -yc])
    return drone_pose.array() + yaw_matrix(drone_pose.yaw) @ body


def back_project(u: float, v: float, depth: float, drone_pose: Pose, cam: CameraModel) -> np.ndarray:
    """Pixel + camera-frame depth → world point."""
    xc = (u - cam.cx) / cam.fx * depth
    yc = (v - cam.cy) / cam.fy * depth
    return camera_to_world(drone_pose, (xc, yc, depth), cam)


# ---------------------------------------------------------------------------
# Gate corners
# ---------------------------------------------------------------------------
def gate_axes(pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(normal, lateral-left, up) unit vectors of a gate pose."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return np.array([c, s, 0.0]), np.array([-s, c, 0.0]), np.array([0.0, 0.0, 1.0])


def gate_corners(gate: GateSpec, t: float, viewer_position) -> np.ndarray:
    """World corners (4, 3) in TL, TR, BR, BL order from the viewer's side."""
    pose = gate.pose_at(t)
    center = pose.array()
    normal, left, up = gate_axes(pose)
    h = gate.side / 2.0

    # A viewer behind the plane sees the gate mirrored left-right
    side = float(np.dot(np.asarray(viewer_position, dtype=float) - center, normal))
    lat = left * (h if side <= 0.0 else -h)
    vert = up * h
    return np.array([
        center + lat + vert,
        center - lat + vert,
        center - lat - vert,
        center + lat - vert,
    ])


def camera_corners(drone_pose: Pose, gate: GateSpec, t: float) -> np.ndarray:
    """Gate corners (4, 3) expressed in the drone's camera frame."""
    return _to_camera(drone_pose, gate_corners(gate, t, drone_pose.position))


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------
def project_points(points_cam: np.ndarray, cam: CameraModel, mode: ProjectionMode = "extrapolated") -> FeatureVec:
    z = points_cam[:, 2]
    in_front = z > cam.min_depth
    safe_z = np.where(in_front, z, 1.0)

    u = np.where(in_front, cam.cx + cam.fx * points_cam[:, 0] / safe_z, cam.cx)
    v = np.where(in_front, cam.cy + cam.fy * points_cam[:, 1] / safe_z, cam.cy)
    visible = in_front

    if mode == "clamped":
        w_max, h_max = cam.width - 1, cam.height - 1
        inside = (u >= 0) & (u <= w_max) & (v >= 0) & (v <= h_max)
        visible = in_front & inside
        u = np.clip(u, 0, w_max)
        v = np.clip(v, 0, h_max)
    elif mode != "extrapolated":
        raise ValueError(f"Unknown projection mode '{mode}'")

    return FeatureVec(coords=np.stack([u, v], axis=1).reshape(8), visible=visible)


def project_corners(
    drone_pose: Pose,
    gate: GateSpec,
    t: float,
    cam: CameraModel,
    mode: ProjectionMode = "extrapolated",
) -> FeatureVec:
    """
    Pinhole projection of the gate's four corners at time t.

    Corners at or behind min_depth are invisible and reported at the
    principal point. extrapolated keeps out-of-frame coordinates; clamped
    marks them invisible and clamps them onto the image rectangle.
    """
    return project_points(camera_corners(drone_pose, gate, t), cam, mode)


# ---------------------------------------------------------------------------
# Traversal / collision
# ---------------------------------------------------------------------------
def traversal_check(
    prev_pos,
    new_pos,
    gate: GateSpec,
    t: float,
    drone_radius: float = DRONE_RADIUS,
) -> TraversalEvent:
    """
    Classify the segment prev_pos → new_pos against the gate plane at time t.

    traversed: crossing point inside the opening shrunk by drone_radius
    collided:  crossing point on the physical frame (opening inflated by frame_band)
    none:      no crossing, or crossing outside the frame
    """
    p0 = np.asarray(prev_pos, dtype=float)
    p1 = np.asarray(new_pos, dtype=float)
    pose = gate.pose_at(t)
    center = pose.array()
    normal, left, up = gate_axes(pose)

    s0 = float(np.dot(p0 - center, normal))
    s1 = float(np.dot(p1 - center, normal))
    # One endpoint strictly behind the plane, the other on or in front of it
    if (s0 < 0.0) == (s1 < 0.0):
        return "none"

    hit = p0 + (s0 / (s0 - s1)) * (p1 - p0)
    lat = abs(float(np.dot(hit - center, left)))
    vert = abs(float(np.dot(hit - center, up)))

    h = gate.side / 2.0
    opening = h - drone_radius
    if lat <= opening and vert <= opening:
        return "traversed"
    outer = h + gate.frame_band
    if lat <= outer and vert <= outer:
        return "collided"
    return "none"
