"""Ground-truth scenarios and synthetic measurement generation.

The generative model: per scan, every landmark whose center is inside
the FOV is detected with probability ``p_detect``; a detected landmark
emits a Poisson number of points drawn around its center with its extent
(plus a small sensor-noise floor); clutter is a Poisson number of points
uniform over the FOV sector. All draws follow a fixed per-scan order so
a seed pins the byte-exact output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import invwishart

from .geometry import (
    FovParams,
    MeasurementBatch,
    ModelConfig,
    PriorParams,
    Rect,
    SensorPose,
    batch_from_arrays,
    fov_contains,
)

MEAS_NOISE_VAR = 0.01**2  # sensor noise folded into the sampled spread


@dataclass(frozen=True, eq=False)
class GroundTruthLandmark:
    position: np.ndarray
    extent: np.ndarray
    detection_rate: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "extent", np.asarray(self.extent, dtype=float))
        if self.detection_rate <= 0.0:
            raise ValueError("detection_rate must be positive")


@dataclass(frozen=True, eq=False)
class Scenario:
    landmarks: tuple
    trajectory: tuple
    fov: FovParams
    model: ModelConfig
    meas_noise_var: float = MEAS_NOISE_VAR

    def __post_init__(self) -> None:
        if not self.trajectory:
            raise ValueError("scenario trajectory must be non-empty")
        for lm in self.landmarks:
            if not self.model.aoi_bounds.contains(lm.position):
                raise ValueError("landmark outside the area of interest")


class SimulationResult(NamedTuple):
    """Generated batch plus per-measurement source labels (-1 = clutter).

    Labels are evaluation-only ground truth; the sampler never sees them.
    """

    batch: MeasurementBatch
    source_labels: np.ndarray


def generate_trajectory(
    waypoints: Sequence[Sequence[float]], step_count: int
) -> list:
    """Poses at equal arc-length steps along a polyline, heading tangent.

    The polyline is closed when the first and last waypoints coincide
    (steps then avoid duplicating the start); otherwise it is traversed
    once, endpoints included.
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("need at least two 2-D waypoints")
    if step_count < 2:
        raise ValueError("step_count must be >= 2")
    closed = bool(np.allclose(pts[0], pts[-1]))
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    keep = seg_len > 0.0
    if not keep.any():
        raise ValueError("degenerate zero-length polyline")
    starts = pts[:-1][keep]
    seg = seg[keep]
    seg_len = seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]

    if closed:
        arcs = np.arange(step_count) * total / step_count
    else:
        arcs = np.arange(step_count) * total / (step_count - 1)

    poses = []
    for k, s in enumerate(arcs, start=1):
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(seg) - 1)
        t = (s - cum[i]) / seg_len[i]
        x, y = starts[i] + t * seg[i]
        heading = math.atan2(seg[i, 1], seg[i, 0])
        poses.append(SensorPose(float(x), float(y), heading, k))
    return poses


def simulate(scenario: Scenario, rng: np.random.Generator) -> SimulationResult:
    """Draw one measurement batch; deterministic under a fixed generator."""
    model = scenario.model
    noise = MEAS_NOISE_VAR if scenario.meas_noise_var is None else scenario.meas_noise_var
    chols = [
        np.linalg.cholesky(lm.extent + noise * np.eye(2))
        for lm in scenario.landmarks
    ]
    points = []
    scans = []
    labels = []
    for pose in scenario.trajectory:
        for li, lm in enumerate(scenario.landmarks):
            if not fov_contains(pose, lm.position, scenario.fov):
                continue
            if rng.random() >= model.p_detect:
                continue
            count = int(rng.poisson(lm.detection_rate))
            if count:
                pts = lm.position + rng.standard_normal((count, 2)) @ chols[li].T
                points.append(pts)
                scans.extend([pose.scan_index] * count)
                labels.extend([li] * count)
        n_clutter = int(rng.poisson(model.clutter_rate))
        if n_clutter:
            radius = scenario.fov.max_range * np.sqrt(rng.random(n_clutter))
            angle = pose.heading + scenario.fov.half_angle * (
                2.0 * rng.random(n_clutter) - 1.0
            )
            pts = np.column_stack(
                [pose.x + radius * np.cos(angle), pose.y + radius * np.sin(angle)]
            )
            points.append(pts)
            scans.extend([pose.scan_index] * n_clutter)
            labels.extend([-1] * n_clutter)
    if points:
        all_points = np.vstack(points)
    else:
        all_points = np.empty((0, 2))
    batch = batch_from_arrays(
        all_points, scans, scenario.trajectory, scenario.fov
    )
    return SimulationResult(batch, np.asarray(labels, dtype=np.int64))


def generate_measurements(
    scenario: Scenario, rng: np.random.Generator
) -> MeasurementBatch:
    """The batch alone; ground truth stays with ``simulate``."""
    return simulate(scenario, rng).batch


def default_prior() -> PriorParams:
    return PriorParams(
        extent_scale=5.0 * np.eye(2),
        extent_dof=5.0,
        count_shape=0.1,
        count_rate=0.2,
        undetected_rate=20.0,
    )


def default_scenario(
    step_count: int = 190,
    landmark_count: int = 20,
    lap_width: float = 150.0,
    lap_height: float = 80.0,
    landmark_offset: float = 10.0,
    detection_rate: float = 1.5,
    fov: Optional[FovParams] = None,
    model: Optional[ModelConfig] = None,
    extent_seed: int = 7,
) -> Scenario:
    """A closed rectangular lap with landmarks flanking the track.

    Defaults: 20 landmarks, 190 poses, a 60 m sector of half-angle 30
    degrees, unit clutter rate, detection certain inside the FOV. True
    extents are drawn once from the prior so the model is well specified;
    the draw uses its own fixed seed, independent of measurement seeds.
    """
    if fov is None:
        fov = FovParams(max_range=60.0, half_angle=math.pi / 6.0)
    if model is None:
        model = ModelConfig(
            p_detect=1.0,
            clutter_rate=1.0,
            aoi_bounds=Rect(-70.0, lap_width + 70.0, -70.0, lap_height + 70.0),
        )
    waypoints = [
        (0.0, 0.0),
        (lap_width, 0.0),
        (lap_width, lap_height),
        (0.0, lap_height),
        (0.0, 0.0),
    ]
    trajectory = generate_trajectory(waypoints, step_count)

    # landmark anchors at equal arc positions along the lap, offset to
    # alternating sides of the track
    pts = np.asarray(waypoints)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    ext_rng = np.random.Generator(np.random.Philox(key=extent_seed))
    prior = default_prior()
    landmarks = []
    for j in range(landmark_count):
        s = (j + 0.37) / landmark_count * total
        i = min(int(np.searchsorted(cum, s, side="right") - 1), len(seg) - 1)
        t = (s - cum[i]) / seg_len[i]
        base = pts[i] + t * seg[i]
        tangent = seg[i] / seg_len[i]
        normal = np.array([-tangent[1], tangent[0]])
        side = 1.0 if j % 2 == 0 else -1.0
        position = base + side * landmark_offset * normal
        extent = invwishart.rvs(
            df=prior.extent_dof, scale=prior.extent_scale, random_state=ext_rng
        )
        landmarks.append(
            GroundTruthLandmark(
                position=position,
                extent=np.asarray(extent),
                detection_rate=detection_rate,
            )
        )
    return Scenario(
        landmarks=tuple(landmarks),
        trajectory=tuple(trajectory),
        fov=fov,
        model=model,
    )


def truth_mixture_arrays(scenario: Scenario) -> tuple:
    """(weights, means, covariances) of the true-map intensity."""
    weights = np.array([lm.detection_rate for lm in scenario.landmarks])
    means = np.vstack([lm.position for lm in scenario.landmarks])
    covs = np.stack([lm.extent for lm in scenario.landmarks])
    return weights, means, covs
