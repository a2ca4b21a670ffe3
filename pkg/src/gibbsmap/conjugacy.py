"""Conjugate per-cell inference for measurement cells.

A cell is a non-empty group of measurements hypothesized to share one
source. Conditioned on the cell, the landmark posterior is normal
(position) x inverse-Wishart (extent) x gamma (detection rate), and the
marginal likelihood of the cell has a closed form. Everything here works
in natural-log domain; products of per-cell factors underflow linear
floats at a few dozen cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from .geometry import FovParams, MeasurementBatch, ModelConfig, PriorParams, fov_area

LOG_PI = math.log(math.pi)
_HALF_LOG_PI = 0.5 * LOG_PI

# below this many scans, scalar FOV tests beat vectorized ones
_SCALAR_SCAN_LIMIT = 16


class DegenerateCellError(ValueError):
    """Raised when a cell's posterior scale matrix is numerically non-SPD."""


def log_bigamma(a: float) -> float:
    """Log of the bivariate gamma function: pi^(1/2) Gamma(a) Gamma(a - 1/2)."""
    return _HALF_LOG_PI + math.lgamma(a) + math.lgamma(a - 0.5)


@dataclass(frozen=True, eq=False)
class CellStats:
    """Sufficient statistics of one cell.

    ``occupied_scans`` counts scans holding at least one cell measurement.
    ``empty_visible_scans`` counts scans with zero cell measurements whose
    FOV contains the cell centroid; both drive the detection-rate update.
    ``centroid_visible`` records whether the centroid is inside the FOV at
    every occupied scan; the sampler zeroes candidates where it is False.
    """

    count: int
    total: np.ndarray
    scatter: np.ndarray
    scan_counts: np.ndarray  # (K,) measurements per scan
    occupied_scans: int
    empty_visible_scans: int
    centroid_visible: bool

    @property
    def centroid(self) -> np.ndarray:
        return self.total / self.count

    @cached_property
    def per_scan_counts(self) -> Mapping[int, int]:
        """Scan index (1-based) to measurement count, occupied scans only."""
        return {
            int(k) + 1: int(c)
            for k, c in enumerate(self.scan_counts)
            if c > 0
        }


def cell_stats(member_ids: Iterable[int], batch: MeasurementBatch) -> CellStats:
    """Compute sufficient statistics for the cell holding ``member_ids``.

    The scatter is the centered second moment sum_z (z - mean)(z - mean)^T.
    Scans with zero cell measurements are tested against the centroid to
    count the missed-detection opportunities.
    """
    ids = np.asarray(sorted(int(i) for i in member_ids), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cells are non-empty by definition")
    if ids[0] < 0 or ids[-1] >= batch.size:
        raise ValueError("cell member ids outside batch")
    pts = batch.points[ids]
    n = pts.shape[0]
    total = pts.sum(axis=0)
    centroid = total / n
    d = pts - centroid
    scatter = d.T @ d
    scan_counts = np.bincount(
        batch.scan_indices[ids] - 1, minlength=batch.scan_count
    )
    occupied = scan_counts > 0
    visible = batch.visibility_mask(centroid)
    occ_visible = int(np.count_nonzero(visible & occupied))
    return CellStats(
        count=n,
        total=total,
        scatter=scatter,
        scan_counts=scan_counts,
        occupied_scans=int(np.count_nonzero(occupied)),
        empty_visible_scans=int(np.count_nonzero(visible)) - occ_visible,
        centroid_visible=occ_visible == int(np.count_nonzero(occupied)),
    )


@dataclass(frozen=True, eq=False)
class NiwGammaParams:
    """Posterior parameter bundle for one landmark.

    ``mean``/``mean_scale`` parameterize the position, ``extent_scale`` and
    ``extent_dof`` the inverse-Wishart extent, ``count_shape``/``count_rate``
    the gamma over expected detections per scan.
    """

    mean: np.ndarray
    mean_scale: float
    extent_scale: np.ndarray
    extent_dof: float
    count_shape: float
    count_rate: float


def posterior_params(
    stats: CellStats, prior: PriorParams, model: ModelConfig
) -> NiwGammaParams:
    """Closed-form conjugate update of the prior by one cell.

    The gamma rate update merges the per-scan missed-detection hypotheses
    into a single mode: each empty visible scan contributes ``p_detect``
    expected exposure.
    """
    if stats.count < 1:
        raise ValueError("cell must contain at least one measurement")
    return NiwGammaParams(
        mean=stats.centroid,
        mean_scale=float(stats.count),
        extent_scale=prior.extent_scale + stats.scatter,
        extent_dof=prior.extent_dof + stats.count - 1,
        count_shape=prior.count_shape + stats.count,
        count_rate=prior.count_rate
        + stats.occupied_scans
        + model.p_detect * stats.empty_visible_scans,
    )


def _log_det2(m: np.ndarray) -> float:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if det <= 0.0 or m[0, 0] <= 0.0:
        raise DegenerateCellError("posterior scale matrix is numerically non-SPD")
    return math.log(det)


def evidence_constant(prior: PriorParams, model: ModelConfig) -> float:
    """Prior-only part of the log evidence, shared by every cell."""
    return (
        -math.log(model.aoi_volume)
        + prior.count_shape * math.log(prior.count_rate)
        - math.lgamma(prior.count_shape)
        + 0.5 * prior.extent_dof * _log_det2(prior.extent_scale)
        - log_bigamma(0.5 * prior.extent_dof)
    )


def log_cell_evidence(
    stats: CellStats, prior: PriorParams, model: ModelConfig
) -> float:
    """Log marginal likelihood of the cell under the landmark origin.

    This is one factor of the partition weight product: the detection
    probability and uniform-position terms times the gamma and
    normal-inverse-Wishart evidence ratios. Singleton cells use the same
    path; their extent factors cancel analytically.
    """
    n = stats.count
    shape_n = prior.count_shape + n
    rate_n = (
        prior.count_rate
        + stats.occupied_scans
        + model.p_detect * stats.empty_visible_scans
    )
    dof_n = prior.extent_dof + n - 1
    scale_n = prior.extent_scale + stats.scatter
    return (
        evidence_constant(prior, model)
        + stats.occupied_scans * math.log(model.p_detect)
        + math.lgamma(shape_n)
        - shape_n * math.log(rate_n)
        + log_bigamma(0.5 * dof_n)
        - (n - 1) * LOG_PI
        - 0.5 * math.log(n)
        - 0.5 * dof_n * _log_det2(scale_n)
    )


def log_clutter_density(model: ModelConfig, fov: FovParams) -> float:
    """Log intensity of the clutter process at any point inside the FOV."""
    if model.clutter_rate == 0.0:
        return -math.inf
    return math.log(model.clutter_rate) - math.log(fov_area(fov))


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def log_cell_likelihood(
    stats: CellStats, prior: PriorParams, model: ModelConfig, fov: FovParams
) -> float:
    """Log likelihood factor of the cell in a partition weight.

    Singleton cells mix the clutter origin with the landmark origin;
    larger cells can only come from a landmark.
    """
    evidence = log_cell_evidence(stats, prior, model)
    if stats.count > 1:
        return evidence
    return _logaddexp(log_clutter_density(model, fov), evidence)


def existence_probability(
    stats: CellStats, prior: PriorParams, model: ModelConfig, fov: FovParams
) -> float:
    """Posterior probability that the cell was generated by a landmark.

    Cells with more than one measurement exist with probability one:
    independent clutter points never share a cell.
    """
    if stats.count > 1:
        return 1.0
    log_clutter = log_clutter_density(model, fov)
    if log_clutter == -math.inf:
        return 1.0
    evidence = log_cell_evidence(stats, prior, model)
    # 1 / (1 + clutter/evidence), evaluated through the log ratio
    return float(1.0 / (1.0 + math.exp(log_clutter - evidence)))


class CellEvaluator:
    """Batch-bound fast path for building cell statistics and likelihoods.

    Captures the measurement and pose arrays plus every prior constant
    once, so the sampler's inner loop touches no Python-level recomputation
    of invariants. Produces values identical to ``cell_stats`` plus
    ``log_cell_likelihood``; a property test holds the two paths together.
    """

    __slots__ = (
        "x", "y", "scans0", "scan_count", "px", "py", "ph",
        "range_sq", "cos_half", "p_detect", "log_p_detect",
        "count_shape", "count_rate", "extent_dof", "s0_xx", "s0_xy", "s0_yy",
        "const", "log_clutter", "id_rows", "cell_cache",
    )

    def __init__(
        self,
        batch: MeasurementBatch,
        prior: PriorParams,
        model: ModelConfig,
    ) -> None:
        self.x = batch.points[:, 0].copy()
        self.y = batch.points[:, 1].copy()
        self.scans0 = (batch.scan_indices - 1).astype(np.int64)
        # one persistent [i] array per measurement; singleton cells are
        # rebuilt constantly and are pure functions of the id
        self.id_rows = np.arange(batch.size, dtype=np.int64).reshape(-1, 1)
        self.cell_cache: dict = {}
        self.scan_count = batch.scan_count
        px, py, ph = batch._pose_arrays
        self.px, self.py, self.ph = px, py, ph
        self.range_sq = batch.fov.max_range**2
        self.cos_half = math.cos(batch.fov.half_angle)
        self.p_detect = model.p_detect
        self.log_p_detect = math.log(model.p_detect)
        self.count_shape = prior.count_shape
        self.count_rate = prior.count_rate
        self.extent_dof = prior.extent_dof
        s0 = prior.extent_scale
        self.s0_xx = float(s0[0, 0])
        self.s0_xy = float(s0[0, 1])
        self.s0_yy = float(s0[1, 1])
        self.const = evidence_constant(prior, model)
        self.log_clutter = log_clutter_density(model, batch.fov)

    def build(self, ids: np.ndarray) -> tuple:
        """(CellStats, log cell likelihood) for sorted member ids."""
        xs = self.x[ids]
        ys = self.y[ids]
        n = ids.size
        sx = float(xs.sum())
        sy = float(ys.sum())
        cx = sx / n
        cy = sy / n
        dx = xs - cx
        dy = ys - cy
        sxx = float(dx @ dx)
        sxy = float(dx @ dy)
        syy = float(dy @ dy)
        scan_counts = np.bincount(self.scans0[ids], minlength=self.scan_count)

        if self.scan_count <= _SCALAR_SCAN_LIMIT:
            n1 = 0
            n_vis = 0
            occ_vis = 0
            for k in range(self.scan_count):
                ddx = cx - self.px[k]
                ddy = cy - self.py[k]
                vis = ddx * ddx + ddy * ddy <= self.range_sq and (
                    math.cos(math.atan2(ddy, ddx) - self.ph[k]) >= self.cos_half
                )
                occ = scan_counts[k] > 0
                n1 += occ
                n_vis += vis
                occ_vis += vis and occ
            n1 = int(n1)
            n_vis = int(n_vis)
            occ_vis = int(occ_vis)
        else:
            ddx = cx - self.px
            ddy = cy - self.py
            vis = (ddx * ddx + ddy * ddy <= self.range_sq) & (
                np.cos(np.arctan2(ddy, ddx) - self.ph) >= self.cos_half
            )
            occ = scan_counts > 0
            n1 = int(np.count_nonzero(occ))
            n_vis = int(np.count_nonzero(vis))
            occ_vis = int(np.count_nonzero(vis & occ))

        stats = CellStats(
            count=int(n),
            total=np.array([sx, sy]),
            scatter=np.array([[sxx, sxy], [sxy, syy]]),
            scan_counts=scan_counts,
            occupied_scans=n1,
            empty_visible_scans=n_vis - occ_vis,
            centroid_visible=occ_vis == n1,
        )

        shape_n = self.count_shape + n
        rate_n = self.count_rate + n1 + self.p_detect * (n_vis - occ_vis)
        dof_n = self.extent_dof + n - 1
        a = self.s0_xx + sxx
        b = self.s0_xy + sxy
        c = self.s0_yy + syy
        det = a * c - b * b
        if det <= 0.0 or a <= 0.0:
            raise DegenerateCellError(
                "posterior scale matrix is numerically non-SPD"
            )
        log_lik = (
            self.const
            + n1 * self.log_p_detect
            + math.lgamma(shape_n)
            - shape_n * math.log(rate_n)
            + _HALF_LOG_PI
            + math.lgamma(0.5 * dof_n)
            + math.lgamma(0.5 * dof_n - 0.5)
            - (n - 1) * LOG_PI
            - 0.5 * math.log(n)
            - 0.5 * dof_n * math.log(det)
        )
        if n == 1:
            log_lik = _logaddexp(self.log_clutter, log_lik)
        return stats, log_lik
