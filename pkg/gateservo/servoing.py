# gateservo/servoing.py
#
# Image-based visual servoing on the four gate corners.
#
# The controller works in normalized image coordinates with a constant
# assumed depth, drops the roll/pitch-rate columns of the classical
# point-feature interaction matrix (the quadrotor cannot command them
# independently) and outputs body-frame linear velocity + yaw rate.

import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gateservo.geometry import CameraModel, FeatureVec

logger = logging.getLogger("gateservo.servoing")


class InsufficientFeaturesError(ValueError):
    """Too few visible corners to determine the 4-DoF command."""


class IbvsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False, populate_by_name=True)

    lambda_: float = Field(default=0.5, gt=0, alias="lambda")
    depth_assumed: float = Field(default=0.5, gt=0)
    error_threshold_px: float = Field(default=8.0, gt=0)
    max_linear_speed: float = Field(default=2.0, gt=0)
    max_yaw_rate: float = Field(default=1.5, gt=0)
    min_visible_corners: int = Field(default=2, ge=1, le=4)
    # Yaw rate of the in-place spin used when the gate is lost
    search_rate: float = Field(default=0.5, ge=0)
    # Frontal distance at which the desired features are synthesized
    desired_distance: float = Field(default=0.5, gt=0)
    svd_rcond: float = Field(default=1e-6, gt=0, lt=1)


@dataclass(frozen=True)
class VelocityCommand:
    """Body-frame linear velocity (forward, left, up) [m/s] + yaw rate [rad/s]."""

    v_body: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0

    @classmethod
    def search(cls, rate: float) -> "VelocityCommand":
        return cls((0.0, 0.0, 0.0), rate)

    def as_array(self) -> np.ndarray:
        return np.array([*self.v_body, self.yaw_rate])


ZERO_COMMAND = VelocityCommand()


# ---------------------------------------------------------------------------
# Interaction matrix
# ---------------------------------------------------------------------------
def normalized_coords(fv: FeatureVec, cam: CameraModel) -> np.ndarray:
    """(4, 2) normalized image coordinates of all corners."""
    uv = fv.uv
    return np.stack([(uv[:, 0] - cam.cx) / cam.fx, (uv[:, 1] - cam.cy) / cam.fy], axis=1)


def interaction_matrix(fv: FeatureVec, cam: CameraModel, Z, min_visible: int = 1) -> np.ndarray:
    """
    Stacked 2×4 blocks for the visible corners, columns (v_x, v_y, v_z, ω_y)
    in the camera frame:

        [−1/Z,    0, x/Z, −(1 + x²)]
        [   0, −1/Z, y/Z, −x·y     ]

    Z may be a scalar or one depth per corner (indexed over all four).
    """
    if fv.n_visible < max(min_visible, 1):
        raise InsufficientFeaturesError(
            f"insufficient features: {fv.n_visible} visible corners, need {max(min_visible, 1)}"
        )
    depths = np.broadcast_to(np.asarray(Z, dtype=float), (4,))
    if np.any(depths <= 0):
        raise ValueError("depth Z must be positive")

    xy = normalized_coords(fv, cam)[fv.visible]
    inv_z = 1.0 / depths[fv.visible]
    x, y = xy[:, 0], xy[:, 1]
    zeros = np.zeros_like(x)

    row_u = np.stack([-inv_z, zeros, x * inv_z, -(1.0 + x * x)], axis=1)
    row_v = np.stack([zeros, -inv_z, y * inv_z, -x * y], axis=1)
    return np.stack([row_u, row_v], axis=1).reshape(-1, 4)


def pseudo_inverse(L: np.ndarray, rcond: float = 1e-6) -> np.ndarray:
    """Moore–Penrose inverse via SVD; singular values below rcond·σ_max are dropped."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.size == 0:
        raise ValueError("pseudo_inverse needs a non-empty matrix")
    return np.linalg.pinv(L, rcond=rcond)


def desired_features(gate_side: float, distance: float, cam: CameraModel) -> FeatureVec:
    """Corners of a centered gate seen frontally from `distance` meters."""
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance}")
    ou = cam.fx * (gate_side / 2.0) / distance
    ov = cam.fy * (gate_side / 2.0) / distance
    return FeatureVec.from_corners([
        (cam.cx - ou, cam.cy - ov),
        (cam.cx + ou, cam.cy - ov),
        (cam.cx + ou, cam.cy + ov),
        (cam.cx - ou, cam.cy + ov),
    ])


# ---------------------------------------------------------------------------
# Control law
# ---------------------------------------------------------------------------
def feature_error_px(measured: FeatureVec, desired: FeatureVec) -> float:
    """RMS pixel difference over the coordinates visible in `measured`."""
    mask = measured.coord_mask()
    if not mask.any():
        return math.inf
    diff = (desired.coords - measured.coords)[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def ibvs_velocity(measured: FeatureVec, desired: FeatureVec, cfg: IbvsConfig, cam: CameraModel) -> np.ndarray:
    """Raw camera-frame command (v_x, v_y, v_z, ω_y) = λ·L⁺·(p* − p), before clamping."""
    L = interaction_matrix(measured, cam, cfg.depth_assumed, cfg.min_visible_corners)
    mask = measured.visible
    err = normalized_coords(desired, cam)[mask] - normalized_coords(measured, cam)[mask]
    return cfg.lambda_ * (pseudo_inverse(L, cfg.svd_rcond) @ err.reshape(-1))


def camera_to_body_command(v_cam: np.ndarray) -> np.ndarray:
    """(v_x, v_y, v_z, ω_y) camera → (forward, left, up, yaw_rate) body."""
    vx, vy, vz, wy = v_cam
    return np.array([vz, -vx, -vy, -wy])


def clamp_command(v: np.ndarray, cfg: IbvsConfig) -> VelocityCommand:
    linear = v[:3]
    speed = float(np.linalg.norm(linear))
    if speed > cfg.max_linear_speed:
        linear = linear * (cfg.max_linear_speed / speed)
    yaw_rate = float(np.clip(v[3], -cfg.max_yaw_rate, cfg.max_yaw_rate))
    return VelocityCommand((float(linear[0]), float(linear[1]), float(linear[2])), yaw_rate)


def ibvs_step(
    measured: FeatureVec,
    desired: FeatureVec,
    cfg: IbvsConfig,
    cam: CameraModel,
) -> tuple[VelocityCommand, float]:
    """
    One servo update. Returns the clamped body-frame command and the pixel
    RMS error. With fewer than min_visible_corners corners the command is
    the in-place search spin and the error is +inf.
    """
    if measured.n_visible < cfg.min_visible_corners:
        return VelocityCommand.search(cfg.search_rate), math.inf

    v_body = camera_to_body_command(ibvs_velocity(measured, desired, cfg, cam))
    return clamp_command(v_body, cfg), feature_error_px(measured, desired)
