"""Core domain types and sensor field-of-view geometry.

Distances are meters, angles radians, headings wrapped to (-pi, pi].
All types are immutable after construction and safe to share read-only
across concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    r = math.remainder(float(angle), TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True)
class SensorPose:
    """Sensor pose at one scan: planar position, heading, 1-based scan index."""

    x: float
    y: float
    heading: float
    scan_index: int

    def __post_init__(self) -> None:
        if self.scan_index < 1:
            raise ValueError(f"scan_index must be >= 1, got {self.scan_index}")
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class FovParams:
    """Circular-sector field of view: maximum range and half opening angle."""

    max_range: float
    half_angle: float

    def __post_init__(self) -> None:
        if not self.max_range > 0.0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")
        if not 0.0 < self.half_angle <= math.pi:
            raise ValueError(
                f"half_angle must be in (0, pi], got {self.half_angle}"
            )


def fov_area(fov: FovParams) -> float:
    """Area of the sector swept by the sensor in one scan (m^2)."""
    return fov.max_range * fov.max_range * fov.half_angle


def fov_contains(pose: SensorPose, point: Sequence[float], fov: FovParams) -> bool:
    """Whether a point lies inside the sector anchored at the pose.

    Boundary points (exact range or bearing equality) count as inside.
    The bearing test is |bearing| <= half_angle, evaluated through the
    cosine so no wrapping is needed.
    """
    dx = float(point[0]) - pose.x
    dy = float(point[1]) - pose.y
    if dx * dx + dy * dy > fov.max_range * fov.max_range:
        return False
    return math.cos(math.atan2(dy, dx) - pose.heading) >= math.cos(fov.half_angle)


def fov_contains_many(
    pose: SensorPose, points: np.ndarray, fov: FovParams
) -> np.ndarray:
    """Vectorized sector test for an ``(n, 2)`` array of points."""
    pts = np.asarray(points, dtype=float)
    dx = pts[:, 0] - pose.x
    dy = pts[:, 1] - pose.y
    inside = dx * dx + dy * dy <= fov.max_range * fov.max_range
    bearing_ok = np.cos(np.arctan2(dy, dx) - pose.heading) >= math.cos(
        fov.half_angle
    )
    return inside & bearing_ok


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, used for the area of interest."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self) -> None:
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate rectangle: {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def contains(self, point: Sequence[float]) -> bool:
        return (
            self.xmin <= point[0] <= self.xmax
            and self.ymin <= point[1] <= self.ymax
        )


@dataclass(frozen=True)
class ModelConfig:
    """Sensor and clutter model shared by simulation and inference.

    ``p_detect`` is one scalar for every scan and every landmark inside the
    field of view, zero outside. Clutter is uniform over the field of view
    with expected count ``clutter_rate`` per scan. The area-of-interest
    volume is derived from the bounds, never stored separately.
    """

    p_detect: float
    clutter_rate: float
    aoi_bounds: Rect

    def __post_init__(self) -> None:
        if not 0.0 < self.p_detect <= 1.0:
            raise ValueError(f"p_detect must be in (0, 1], got {self.p_detect}")
        if self.clutter_rate < 0.0:
            raise ValueError(f"clutter_rate must be >= 0, got {self.clutter_rate}")

    @property
    def aoi_volume(self) -> float:
        return self.aoi_bounds.area


def _as_spd_matrix(value, name: str) -> np.ndarray:
    m = np.array(value, dtype=float)
    if m.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2, got shape {m.shape}")
    if abs(m[0, 1] - m[1, 0]) > 1e-9 * (1.0 + abs(m[0, 1])):
        raise ValueError(f"{name} must be symmetric")
    if m[0, 0] <= 0.0 or m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0] <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    m.flags.writeable = False
    return m


@dataclass(frozen=True, eq=False)
class PriorParams:
    """Conjugate prior for a landmark: uniform position over the AOI,
    inverse-Wishart extent, gamma detection rate.

    ``extent_dof`` must exceed d + 1 = 3 so the prior extent mean exists.
    ``undetected_rate`` is the prior expected number of landmarks that the
    sensor never observes; it feeds the undetected-intensity raster only.
    """

    extent_scale: np.ndarray
    extent_dof: float
    count_shape: float
    count_rate: float
    undetected_rate: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "extent_scale", _as_spd_matrix(self.extent_scale, "extent_scale")
        )
        if not self.extent_dof > 3.0:
            raise ValueError(
                f"extent_dof must be > 3 for the extent mean to exist, "
                f"got {self.extent_dof}"
            )
        if self.count_shape <= 0.0 or self.count_rate <= 0.0:
            raise ValueError("count_shape and count_rate must be positive")
        if self.undetected_rate < 0.0:
            raise ValueError("undetected_rate must be >= 0")


@dataclass(frozen=True)
class Measurement:
    """One 2-D point detection tagged with its scan."""

    x: float
    y: float
    scan_index: int
    meas_id: int

    @property
    def point(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class MeasurementBatch:
    """All detections from K scans plus the trajectory that produced them.

    Invariants checked at construction: trajectory scan indices are 1..K
    with no gaps, measurement ids are dense 0..N-1, and every measurement
    references an existing scan.
    """

    measurements: tuple
    trajectory: tuple
    fov: FovParams

    def __post_init__(self) -> None:
        object.__setattr__(self, "measurements", tuple(self.measurements))
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        scans = [p.scan_index for p in self.trajectory]
        if scans != list(range(1, len(scans) + 1)):
            raise ValueError("trajectory must be sorted 1..K with no gaps")
        ids = sorted(m.meas_id for m in self.measurements)
        if ids != list(range(len(ids))):
            raise ValueError("measurement ids must be dense and unique 0..N-1")
        for m in self.measurements:
            if not 1 <= m.scan_index <= len(scans):
                raise ValueError(
                    f"measurement {m.meas_id} references unknown scan "
                    f"{m.scan_index}"
                )

    @property
    def size(self) -> int:
        return len(self.measurements)

    @property
    def scan_count(self) -> int:
        return len(self.trajectory)

    @cached_property
    def points(self) -> np.ndarray:
        """``(N, 2)`` measurement coordinates indexed by measurement id."""
        pts = np.zeros((len(self.measurements), 2))
        for m in self.measurements:
            pts[m.meas_id, 0] = m.x
            pts[m.meas_id, 1] = m.y
        pts.flags.writeable = False
        return pts

    @cached_property
    def scan_indices(self) -> np.ndarray:
        """``(N,)`` 1-based scan index per measurement id."""
        idx = np.zeros(len(self.measurements), dtype=np.int64)
        for m in self.measurements:
            idx[m.meas_id] = m.scan_index
        idx.flags.writeable = False
        return idx

    @cached_property
    def _pose_arrays(self) -> tuple:
        px = np.array([p.x for p in self.trajectory])
        py = np.array([p.y for p in self.trajectory])
        ph = np.array([p.heading for p in self.trajectory])
        for a in (px, py, ph):
            a.flags.writeable = False
        return px, py, ph

    def visibility_mask(self, point: Sequence[float]) -> np.ndarray:
        """``(K,)`` boolean: is ``point`` inside the FOV at each scan."""
        px, py, ph = self._pose_arrays
        dx = float(point[0]) - px
        dy = float(point[1]) - py
        inside = dx * dx + dy * dy <= self.fov.max_range * self.fov.max_range
        bearing_ok = np.cos(np.arctan2(dy, dx) - ph) >= math.cos(
            self.fov.half_angle
        )
        return inside & bearing_ok


def batch_from_arrays(
    points: np.ndarray,
    scan_indices: Sequence[int],
    trajectory: Sequence[SensorPose],
    fov: FovParams,
) -> MeasurementBatch:
    """Build a batch from parallel coordinate/scan arrays, ids in row order."""
    pts = np.asarray(points, dtype=float)
    measurements = [
        Measurement(float(pts[i, 0]), float(pts[i, 1]), int(scan_indices[i]), i)
        for i in range(pts.shape[0])
    ]
    return MeasurementBatch(tuple(measurements), tuple(trajectory), fov)
