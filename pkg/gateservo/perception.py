# gateservo/perception.py
#
# Pluggable gate-corner "detectors" standing in for the on-board CNN/FCNN
# front-ends, the corner feature-map codec, the offline RMSE harness and a
# receptive-field calculator.
#
# Detectors:
#   oracle          : ground truth passes through
#   gaussian_noise  : i.i.d. per-coordinate pixel noise (regression-CNN stand-in)
#   featuremap      : encode to per-corner heatmaps, perturb, argmax-decode
#                     (models the FCNN's coarse output grid)
#
# All randomness comes from an explicit numpy Generator.

import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gateservo.geometry import (
    CORNER_NAMES,
    CameraModel,
    FeatureVec,
    GateSpec,
    Pose,
    ProjectionMode,
    project_corners,
)

logger = logging.getLogger("gateservo.perception")

PerceptionKind = Literal["oracle", "gaussian_noise", "featuremap"]
DecodeMode = Literal["center", "endpoint"]

# Offline int8 RMSE of the two front-ends, used as noise presets
SIGMA_CNN = 1.45
SIGMA_FCNN = 6.31
PROFILES: dict[str, float] = {"cnn": SIGMA_CNN, "fcnn": SIGMA_FCNN}

IMAGE_SIZE = 160


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------
class PerceptionConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    kind: PerceptionKind = "oracle"
    # Optional preset; only fills sigma_px when sigma_px is not given
    profile: Literal["cnn", "fcnn"] | None = None
    sigma_px: float = Field(default=SIGMA_CNN, ge=0)
    map_size: int = Field(default=20, ge=2)
    sigma_bins: float = Field(default=1.0, gt=0)
    map_noise: float = Field(default=0.05, ge=0)
    decode_mode: DecodeMode = "center"
    latency_steps: int = Field(default=1, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    projection: ProjectionMode = "extrapolated"

    @model_validator(mode="before")
    @classmethod
    def _apply_profile(cls, data):
        if isinstance(data, dict) and data.get("profile") in PROFILES and "sigma_px" not in data:
            data = {**data, "sigma_px": PROFILES[data["profile"]]}
        return data


@dataclass(frozen=True, eq=False)
class FeatureMapSet:
    """4 map_size × map_size heatmaps, one per corner, indexed maps[c][i][j] (i → u, j → v)."""

    maps: np.ndarray

    @property
    def map_size(self) -> int:
        return int(self.maps.shape[1])


class ConvLayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kernel: int = Field(ge=1)
    stride: int = Field(default=1, ge=1)


class DatasetFormatError(ValueError):
    """Malformed row in an RMSE dataset file; `line` is 1-based."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# ---------------------------------------------------------------------------
# Feature-map codec
# ---------------------------------------------------------------------------
def encode_featuremaps(
    fv: FeatureVec,
    map_size: int = 20,
    sigma_bins: float = 1.0,
    image_size: int = IMAGE_SIZE,
) -> FeatureMapSet:
    """
    Gaussian heatmap per corner: exp(−d²/(2·sigma_bins²)), d measured in
    bins between each bin center and the corner. Bin width = image_size / map_size.
    """
    bin_width = image_size / map_size
    uv = np.clip(fv.uv, 0.0, image_size - 1)
    centers = uv / bin_width - 0.5          # corner position in bin units
    idx = np.arange(map_size, dtype=float)
    denom = 2.0 * sigma_bins * sigma_bins

    gu = np.exp(-((idx[None, :] - centers[:, 0:1]) ** 2) / denom)
    gv = np.exp(-((idx[None, :] - centers[:, 1:2]) ** 2) / denom)
    return FeatureMapSet(maps=gu[:, :, None] * gv[:, None, :])


def decode_featuremaps(
    fm: FeatureMapSet,
    image_size: int = IMAGE_SIZE,
    mode: DecodeMode = "center",
) -> FeatureVec:
    """Argmax per map (row-major, first wins) rescaled to pixels; all corners visible."""
    m = fm.map_size
    flat = fm.maps.reshape(4, -1).argmax(axis=1)
    i, j = np.divmod(flat, m)
    if mode == "center":
        bin_width = image_size / m
        u = bin_width * i + bin_width / 2.0
        v = bin_width * j + bin_width / 2.0
    elif mode == "endpoint":
        scale = (image_size - 1) / (m - 1)
        u = i * scale
        v = j * scale
    else:
        raise ValueError(f"Unknown decode mode '{mode}'")
    return FeatureVec.from_corners(np.stack([u, v], axis=1))


# ---------------------------------------------------------------------------
# Detectors
# ---------------------------------------------------------------------------
def perceive(
    truth: FeatureVec,
    cfg: PerceptionConfig,
    rng: np.random.Generator,
    image_size: int = IMAGE_SIZE,
) -> FeatureVec:
    """Measured corners for one frame. Visibility always follows the truth."""
    if cfg.kind == "oracle":
        return truth

    mask = truth.coord_mask()

    if cfg.kind == "gaussian_noise":
        if cfg.sigma_px == 0.0:
            return truth
        noise = rng.normal(0.0, cfg.sigma_px, size=8)
        return truth.with_coords(np.where(mask, truth.coords + noise, truth.coords))

    if cfg.kind == "featuremap":
        maps = encode_featuremaps(truth, cfg.map_size, cfg.sigma_bins, image_size).maps
        if cfg.map_noise > 0.0:
            maps = np.clip(maps + rng.normal(0.0, cfg.map_noise, size=maps.shape), 0.0, 1.0)
        decoded = decode_featuremaps(FeatureMapSet(maps=maps), image_size, cfg.decode_mode)
        return truth.with_coords(np.where(mask, decoded.coords, truth.coords))

    raise ValueError(f"Unknown perception kind '{cfg.kind}'")


class Perceiver:
    """
    Stateful detector used inside the closed loop: owns the random
    generator and a FIFO that delays measurements by latency_steps frames.
    """

    def __init__(self, cfg: PerceptionConfig, run_seed: int = 0, image_size: int = IMAGE_SIZE):
        self.cfg = cfg
        self.image_size = image_size
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, run_seed]))
        self._fifo: deque[FeatureVec] = deque(maxlen=cfg.latency_steps + 1)

    def observe(self, truth: FeatureVec) -> FeatureVec:
        self._fifo.append(perceive(truth, self.cfg, self.rng, self.image_size))
        return self._fifo[0]


# ---------------------------------------------------------------------------
# RMSE harness
# ---------------------------------------------------------------------------
def stack_features(fvs: Sequence[FeatureVec]) -> tuple[np.ndarray, np.ndarray]:
    """(N, 8) coordinates and (N, 4) visibility from a FeatureVec sequence."""
    if not fvs:
        return np.zeros((0, 8)), np.zeros((0, 4), dtype=bool)
    return np.stack([f.coords for f in fvs]), np.stack([f.visible for f in fvs])


def rmse_breakdown(truth: np.ndarray, pred: np.ndarray, visible: np.ndarray) -> dict:
    """
    Overall and per-corner RMSE [px] over visible coordinates, pooled per
    coordinate. Corners never visible report None.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 8)
    pred = np.asarray(pred, dtype=float).reshape(-1, 8)
    visible = np.asarray(visible, dtype=bool).reshape(-1, 4)
    if not (len(truth) == len(pred) == len(visible)):
        raise ValueError(
            f"truth, predictions and visibility differ in length: "
            f"{len(truth)} / {len(pred)} / {len(visible)}"
        )
    if len(truth) == 0:
        raise ValueError("RMSE needs at least one sample")

    mask = np.repeat(visible, 2, axis=1)
    if not mask.any():
        raise ValueError("RMSE needs at least one visible coordinate")

    sq = (pred - truth) ** 2
    per_corner: dict[str, float | None] = {}
    for c, name in enumerate(CORNER_NAMES):
        m = mask[:, 2 * c:2 * c + 2]
        per_corner[name] = float(np.sqrt(sq[:, 2 * c:2 * c + 2][m].mean())) if m.any() else None

    return {
        "overall": float(np.sqrt(sq[mask].mean())),
        "per_corner": per_corner,
        "n_samples": int(len(truth)),
        "n_coords": int(mask.sum()),
    }


def rmse_eval(predictions: Sequence[FeatureVec], truths: Sequence[FeatureVec]) -> float:
    """RMSE [px] over all coordinates visible in the ground truth."""
    if len(predictions) != len(truths):
        raise ValueError(f"predictions and truths differ in length: {len(predictions)} vs {len(truths)}")
    if not truths:
        raise ValueError("rmse_eval needs at least one sample")
    truth, visible = stack_features(truths)
    pred, _ = stack_features(predictions)
    return rmse_breakdown(truth, pred, visible)["overall"]


def dummy_predictions(truths: Sequence[FeatureVec]) -> list[FeatureVec]:
    """Baseline that always predicts the per-coordinate mean of the (visible) truths."""
    truth, visible = stack_features(truths)
    mask = np.repeat(visible, 2, axis=1)
    counts = mask.sum(axis=0)
    sums = np.where(mask, truth, 0.0).sum(axis=0)
    mean = np.divide(sums, counts, out=np.zeros(8), where=counts > 0)
    return [FeatureVec(coords=mean, visible=f.visible) for f in truths]


# ---------------------------------------------------------------------------
# Synthetic ground truth
# ---------------------------------------------------------------------------
def synthetic_truths(
    n: int,
    rng: np.random.Generator,
    cam: CameraModel | None = None,
    gate_side: float = 1.0,
    mode: ProjectionMode = "clamped",
) -> list[FeatureVec]:
    """
    Ground-truth corners obtained by projecting a gate from random drone
    poses around the three approach bearings (−45°, 0°, +45°) at 1–4 m.
    """
    cam = cam or CameraModel()
    gate = GateSpec(pose=Pose(position=(0.0, 0.0, 1.0), yaw=0.0), side=gate_side)
    bearings = rng.choice(np.radians([-45.0, 0.0, 45.0]), size=n) + rng.normal(0.0, math.radians(5), n)
    ranges = rng.uniform(1.0, 4.0, n)
    heights = 1.0 + rng.normal(0.0, 0.2, n)
    yaw_jitter = rng.normal(0.0, math.radians(10), n)

    out: list[FeatureVec] = []
    for b, r, z, dy in zip(bearings, ranges, heights, yaw_jitter):
        pose = Pose(position=(-r * math.cos(b), -r * math.sin(b), z), yaw=b + dy)
        out.append(project_corners(pose, gate, 0.0, cam, mode))
    return out


# ---------------------------------------------------------------------------
# Dataset file: 8 truth coords, 8 predicted coords, 4 visibility flags per row
# ---------------------------------------------------------------------------
_FIELDS_PER_ROW = 20
_FLAG_VALUES = {"1": True, "0": False, "true": True, "false": False, "1.0": True, "0.0": False}


def _parse_float(token: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DatasetFormatError(line, f"not a number: '{token}'") from None
    if not math.isfinite(value):
        raise DatasetFormatError(line, f"non-finite value: '{token}'")
    return value


def load_rmse_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (truth (N, 8), predictions (N, 8), visibility (N, 4))."""
    with open(path, encoding="utf-8") as f:
        return parse_rmse_dataset(f.read().splitlines())


def parse_rmse_dataset(lines: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    truth, pred, vis = [], [], []
    header_allowed = True
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [tok.strip() for tok in line.split(",")]

        # Optional header: only the first non-comment line, and only if no field is numeric
        is_header = header_allowed and not any(_looks_numeric(tok) for tok in fields)
        header_allowed = False
        if is_header:
            continue

        if len(fields) != _FIELDS_PER_ROW:
            raise DatasetFormatError(lineno, f"expected {_FIELDS_PER_ROW} fields, got {len(fields)}")
        values = [_parse_float(tok, lineno) for tok in fields[:16]]
        flags = []
        for tok in fields[16:]:
            flag = _FLAG_VALUES.get(tok.lower())
            if flag is None:
                raise DatasetFormatError(lineno, f"visibility flag must be 0/1/true/false, got '{tok}'")
            flags.append(flag)
        truth.append(values[:8])
        pred.append(values[8:])
        vis.append(flags)

    if not truth:
        raise DatasetFormatError(len(lines), "dataset contains no samples")
    return np.array(truth), np.array(pred), np.array(vis, dtype=bool)


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def write_rmse_dataset(path: str | Path, truth: np.ndarray, pred: np.ndarray, visible: np.ndarray) -> None:
    names = [f"{ax}{i + 1}" for i in range(4) for ax in ("u", "v")]
    header = ",".join(
        [f"gt_{n}" for n in names] + [f"pred_{n}" for n in names] + [f"vis_{c}" for c in CORNER_NAMES]
    )
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for t_row, p_row, v_row in zip(np.asarray(truth), np.asarray(pred), np.asarray(visible)):
            cells = [f"{x:.6f}" for x in t_row] + [f"{x:.6f}" for x in p_row] + [str(int(b)) for b in v_row]
            f.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# Receptive field
# ---------------------------------------------------------------------------
def _as_layer(layer) -> ConvLayerSpec:
    if isinstance(layer, ConvLayerSpec):
        return layer
    kernel, stride = layer
    return ConvLayerSpec(kernel=kernel, stride=stride)


def receptive_field_trace(layers: Sequence) -> list[tuple[int, int]]:
    """(receptive field, cumulative stride) after each layer."""
    if not layers:
        raise ValueError("receptive_field needs at least one layer")
    rf, jump = 1, 1
    trace = []
    for layer in map(_as_layer, layers):
        rf = rf + (layer.kernel - 1) * jump
        jump = jump * layer.stride
        trace.append((rf, jump))
    return trace


def receptive_field(layers: Sequence) -> int:
    return receptive_field_trace(layers)[-1][0]


def parse_layers(spec: str | Sequence[str]) -> list[ConvLayerSpec]:
    """Parse "3,1 2,2 3,1" (or a list of "k,s" tokens) into layer specs."""
    tokens = spec.split() if isinstance(spec, str) else [t for part in spec for t in part.split()]
    if not tokens:
        raise ValueError("no layers given; expected tokens like '3,1'")
    layers = []
    for tok in tokens:
        parts = tok.split(",")
        try:
            if len(parts) != 2:
                raise ValueError
            layers.append(ConvLayerSpec(kernel=int(parts[0]), stride=int(parts[1])))
        except (ValueError, ValidationError):
            raise ValueError(f"cannot parse layer '{tok}': expected kernel,stride with both ≥ 1") from None
    return layers
