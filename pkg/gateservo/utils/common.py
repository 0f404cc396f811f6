# gateservo/utils/common.py
#
# Shared numeric helpers used across geometry, vehicle and scenario.

import math

import numpy as np


# ---------------------------------------------------------------------------
# Angles
# ---------------------------------------------------------------------------
def wrap_angle(angle: float) -> float:
    """Normalize an angle to (−π, π]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about the world up-axis (body → world)."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------
def polyline_length(points: np.ndarray) -> float:
    """Sum of consecutive segment lengths of an (N, 3) point array."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def rms(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(values * values)))
