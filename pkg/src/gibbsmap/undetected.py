"""Posterior intensity of landmarks the sensor never detected.

A landmark at a position covered by n scans survives undetected with a
probability that mixes missed detections and zero-count draws, averaged
over the gamma prior on its detection rate. The position density starts
uniform over the area of interest and is thinned by that factor cell by
cell; outside every FOV it keeps the prior value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .geometry import (
    FovParams,
    ModelConfig,
    PriorParams,
    Rect,
    SensorPose,
    fov_contains_many,
)


@dataclass(frozen=True, eq=False)
class Grid:
    """Square-cell raster covering the area of interest."""

    bounds: Rect
    resolution: float
    nx: int
    ny: int

    @property
    def cell_area(self) -> float:
        return self.resolution * self.resolution

    def centers(self) -> np.ndarray:
        """``(ny * nx, 2)`` cell centers, row-major from ymin upwards."""
        xs = self.bounds.xmin + (np.arange(self.nx) + 0.5) * self.resolution
        ys = self.bounds.ymin + (np.arange(self.ny) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def make_grid(bounds: Rect, resolution: float) -> Grid:
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    nx = max(1, math.ceil((bounds.xmax - bounds.xmin) / resolution))
    ny = max(1, math.ceil((bounds.ymax - bounds.ymin) / resolution))
    return Grid(bounds=bounds, resolution=resolution, nx=nx, ny=ny)


@dataclass(frozen=True, eq=False)
class IntensityRaster:
    """Per-cell rate density (landmarks per square meter) over the grid."""

    grid: Grid
    values: np.ndarray  # (ny, nx)

    @property
    def total_rate(self) -> float:
        """Raster approximation of the undetected-landmark Poisson rate."""
        return float(self.values.sum() * self.grid.cell_area)


def visit_counts(
    trajectory: Sequence[SensorPose], fov: FovParams, grid: Grid
) -> np.ndarray:
    """``(ny, nx)`` count of scans whose FOV contains each cell center."""
    centers = grid.centers()
    counts = np.zeros(centers.shape[0], dtype=np.int64)
    for pose in trajectory:
        counts += fov_contains_many(pose, centers, fov)
    return counts.reshape(grid.ny, grid.nx)


def log_survival_factor(n: int, prior: PriorParams, model: ModelConfig) -> float:
    """Log probability that a landmark seen by n scans yields no detection.

    Marginalizes the per-scan miss probability over the gamma prior on the
    detection rate; the binomial expansion is summed in log domain because
    its coefficients overflow linear floats for large n.
    """
    if n < 0:
        raise ValueError("visit count must be >= 0")
    if n == 0:
        return 0.0
    p = model.p_detect
    a = prior.count_shape
    b = prior.count_rate
    if p == 1.0:
        return a * (math.log(b) - math.log(b + n))
    m = np.arange(n + 1)
    log_terms = (
        gammaln(n + 1)
        - gammaln(m + 1)
        - gammaln(n - m + 1)
        + (n - m) * math.log1p(-p)
        + np.where(m > 0, m * math.log(p), 0.0)
        + a * (math.log(b) - np.log(b + m))
    )
    return float(logsumexp(log_terms))


def survival_factor(n: int, prior: PriorParams, model: ModelConfig) -> float:
    return math.exp(log_survival_factor(n, prior, model))


def undetected_raster(
    prior: PriorParams,
    model: ModelConfig,
    visits: np.ndarray,
    grid: Grid,
) -> IntensityRaster:
    """Thin the uniform prior density by the survival factor per cell."""
    visits = np.asarray(visits)
    if visits.shape != (grid.ny, grid.nx):
        raise ValueError("visit raster shape does not match the grid")
    base = prior.undetected_rate / model.aoi_volume
    factors = np.array(
        [survival_factor(int(n), prior, model) for n in range(int(visits.max()) + 1)]
    )
    return IntensityRaster(grid=grid, values=base * factors[visits])
