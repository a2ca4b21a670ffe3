"""Map extraction from a sample trace.

Each retained partition is turned into a per-sample landmark list (cells
above the existence threshold), landmarks are associated across samples
by single-linkage position clustering, spurious clusters are dropped,
and the survivors are averaged component-wise. Sub-threshold singleton
cells are counted as clutter for the clutter-rate estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .conjugacy import (
    NiwGammaParams,
    existence_probability,
    log_clutter_density,
    posterior_params,
)
from .geometry import MeasurementBatch, ModelConfig, PriorParams
from .partition import Partition
from .sampler import SampleTrace

_LOG_PI = math.log(math.pi)


@dataclass(frozen=True, eq=False)
class LandmarkEstimate:
    """Averaged landmark: position, extent matrix, expected detections per
    scan, and the fraction of samples supporting it."""

    position: np.ndarray
    extent: np.ndarray
    weight: float
    support: float


@dataclass(frozen=True, eq=False)
class MapEstimate:
    landmarks: tuple
    clutter_rate_estimate: float


@dataclass(frozen=True, eq=False)
class IntensityMixture:
    """Unnormalized Gaussian mixture over positions: one weighted component
    per landmark."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        m = np.asarray(self.means, dtype=float).reshape(-1, 2)
        c = np.asarray(self.covariances, dtype=float).reshape(-1, 2, 2)
        if not (w.shape[0] == m.shape[0] == c.shape[0]):
            raise ValueError("mixture arrays must have matching lengths")
        if np.any(w <= 0.0):
            raise ValueError("mixture weights must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    @property
    def components(self) -> list:
        return [
            (float(self.weights[i]), self.means[i], self.covariances[i])
            for i in range(len(self))
        ]

    @classmethod
    def empty(cls) -> "IntensityMixture":
        return cls(np.empty(0), np.empty((0, 2)), np.empty((0, 2, 2)))


class LandmarkSample(NamedTuple):
    """One landmark instance inside one retained sample."""

    position: np.ndarray
    extent: np.ndarray
    weight: float


def extent_mean(params: NiwGammaParams) -> np.ndarray:
    """Mean of the inverse-Wishart extent; requires dof > d + 1 = 3."""
    denom = params.extent_dof - 3.0
    if denom <= 0.0:
        raise ValueError(
            f"extent mean undefined for dof {params.extent_dof}; need > 3"
        )
    return params.extent_scale / denom


def landmark_from_params(params: NiwGammaParams) -> LandmarkSample:
    return LandmarkSample(
        position=params.mean,
        extent=extent_mean(params),
        weight=params.count_shape / params.count_rate,
    )


def extract_landmarks(
    p: Partition, prior: PriorParams, model: ModelConfig, threshold: float
) -> list:
    """Cells that qualify as landmarks in one partition.

    Every multi-measurement cell qualifies; a singleton qualifies only
    when its existence probability reaches the threshold. Singleton
    posteriors carry the prior extent unchanged: one point says nothing
    about shape. Returns (posterior params, cell size) pairs in canonical
    cell-key order.
    """
    out = []
    for key in sorted(p.cells):
        cell = p.cells[key]
        if cell.stats.count == 1:
            r = existence_probability(cell.stats, prior, model, p.batch.fov)
            if r < threshold:
                continue
        out.append((posterior_params(cell.stats, prior, model), cell.stats.count))
    return out


# ----------------------------------------------------------------------
# vectorized per-snapshot cell summaries (used for whole traces)
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _SnapshotCells:
    keys: np.ndarray
    counts: np.ndarray
    centroids: np.ndarray       # (C, 2)
    scale_xx: np.ndarray        # posterior extent scale entries
    scale_xy: np.ndarray
    scale_yy: np.ndarray
    extent_dof: np.ndarray
    count_shape: np.ndarray
    count_rate: np.ndarray
    existence: np.ndarray


def _snapshot_cells(
    labels: np.ndarray,
    scope: np.ndarray,
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
) -> _SnapshotCells:
    keys, inv = np.unique(labels, return_inverse=True)
    n_cells = keys.size
    x = batch.points[scope, 0]
    y = batch.points[scope, 1]
    counts = np.bincount(inv, minlength=n_cells)
    cx = np.bincount(inv, weights=x, minlength=n_cells) / counts
    cy = np.bincount(inv, weights=y, minlength=n_cells) / counts
    dx = x - cx[inv]
    dy = y - cy[inv]
    scat_xx = np.bincount(inv, weights=dx * dx, minlength=n_cells)
    scat_xy = np.bincount(inv, weights=dx * dy, minlength=n_cells)
    scat_yy = np.bincount(inv, weights=dy * dy, minlength=n_cells)

    scan_count = batch.scan_count
    codes = np.unique(inv * scan_count + (batch.scan_indices[scope] - 1))
    code_cells = codes // scan_count
    code_scans = codes % scan_count
    occupied = np.bincount(code_cells, minlength=n_cells)

    px, py, ph = batch._pose_arrays
    ddx = cx[:, None] - px[None, :]
    ddy = cy[:, None] - py[None, :]
    inside = ddx * ddx + ddy * ddy <= batch.fov.max_range**2
    bearing_ok = np.cos(np.arctan2(ddy, ddx) - ph[None, :]) >= math.cos(
        batch.fov.half_angle
    )
    visible = inside & bearing_ok
    vis_total = visible.sum(axis=1)
    occ_vis = np.bincount(
        code_cells,
        weights=visible[code_cells, code_scans].astype(float),
        minlength=n_cells,
    )
    empty_visible = vis_total - occ_vis

    s0 = prior.extent_scale
    scale_xx = s0[0, 0] + scat_xx
    scale_xy = s0[0, 1] + scat_xy
    scale_yy = s0[1, 1] + scat_yy
    dets = scale_xx * scale_yy - scale_xy * scale_xy
    det0 = s0[0, 0] * s0[1, 1] - s0[0, 1] * s0[1, 0]

    shape_n = prior.count_shape + counts
    rate_n = prior.count_rate + occupied + model.p_detect * empty_visible
    dof_0 = prior.extent_dof
    dof_n = dof_0 + counts - 1.0

    def log_bigamma_vec(a):
        return 0.5 * _LOG_PI + gammaln(a) + gammaln(a - 0.5)

    log_evidence = (
        occupied * math.log(model.p_detect)
        - math.log(model.aoi_volume)
        + prior.count_shape * math.log(prior.count_rate)
        + gammaln(shape_n)
        - shape_n * np.log(rate_n)
        - math.lgamma(prior.count_shape)
        + 0.5 * dof_0 * math.log(det0)
        + log_bigamma_vec(0.5 * dof_n)
        - (counts - 1) * _LOG_PI
        - 0.5 * np.log(counts)
        - log_bigamma_vec(0.5 * dof_0)
        - 0.5 * dof_n * np.log(dets)
    )

    log_clutter = log_clutter_density(model, batch.fov)
    if log_clutter == -math.inf:
        existence = np.ones(n_cells)
    else:
        existence = 1.0 / (1.0 + np.exp(log_clutter - log_evidence))
    existence = np.where(counts > 1, 1.0, existence)

    return _SnapshotCells(
        keys=keys,
        counts=counts,
        centroids=np.column_stack([cx, cy]),
        scale_xx=scale_xx,
        scale_xy=scale_xy,
        scale_yy=scale_yy,
        extent_dof=dof_n,
        count_shape=shape_n,
        count_rate=rate_n,
        existence=existence,
    )


def _process_trace(
    trace: SampleTrace,
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    threshold: float,
) -> tuple:
    """Per-sample landmark lists and per-sample clutter-cell counts."""
    samples: list = []
    clutter_counts: list = []
    degenerate = 0
    for entry in trace.entries:
        cells = _snapshot_cells(entry.labels, trace.scope, batch, prior, model)
        keep = (cells.counts > 1) | (cells.existence >= threshold)
        clutter_counts.append(
            int(((cells.counts == 1) & (cells.existence < threshold)).sum())
        )
        denom = cells.extent_dof - 3.0
        bad = keep & (denom <= 0.0)
        if np.any(bad):
            degenerate += int(bad.sum())
            keep &= ~bad
        idx = np.nonzero(keep)[0]
        landmarks = []
        for i in idx:
            extent = (
                np.array(
                    [
                        [cells.scale_xx[i], cells.scale_xy[i]],
                        [cells.scale_xy[i], cells.scale_yy[i]],
                    ]
                )
                / denom[i]
            )
            landmarks.append(
                LandmarkSample(
                    position=cells.centroids[i],
                    extent=extent,
                    weight=float(cells.count_shape[i] / cells.count_rate[i]),
                )
            )
        samples.append(landmarks)
    if degenerate:
        warnings.warn(
            f"dropped {degenerate} cells whose extent dof never exceeded 3",
            RuntimeWarning,
            stacklevel=2,
        )
    return samples, clutter_counts


def trace_landmarks(
    trace: SampleTrace,
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    threshold: float,
) -> list:
    """Landmark list for every retained sample of the trace."""
    samples, _ = _process_trace(trace, batch, prior, model, threshold)
    return samples


def estimate_clutter_rate(
    trace: SampleTrace,
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    threshold: float,
    scan_count: Optional[int] = None,
) -> float:
    """Average per-sample count of sub-threshold singletons per scan."""
    if scan_count is None:
        scan_count = batch.scan_count
    if scan_count < 1:
        raise ValueError("scan_count must be >= 1")
    _, clutter_counts = _process_trace(trace, batch, prior, model, threshold)
    if not clutter_counts:
        raise ValueError("trace holds no samples")
    return float(np.mean(clutter_counts) / scan_count)


# ----------------------------------------------------------------------
# cross-sample association
# ----------------------------------------------------------------------


def _radius_components(positions: np.ndarray, radius: float) -> np.ndarray:
    """Component label per point under single linkage at ``radius``.

    Traces repeat the same cell centroid across thousands of samples, so
    exact duplicates are collapsed before the radius graph is built;
    otherwise the pair count explodes quadratically inside stable
    clusters. Duplicates share a component by construction (distance 0).
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    unique, inverse = np.unique(positions, axis=0, return_inverse=True)
    n = unique.shape[0]
    pairs = cKDTree(unique).query_pairs(radius, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(pairs.shape[0]), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    return labels[inverse]


def associate_and_average(
    trace_landmark_lists: Sequence[Sequence[LandmarkSample]],
    assoc_radius: float,
    spurious_fraction: float,
    clutter_rate_estimate: float = 0.0,
) -> MapEstimate:
    """Cluster per-sample landmarks by position and average the survivors.

    Clustering is single linkage over the within-radius graph, so the
    result does not depend on sample order. Clusters supported by fewer
    than ``spurious_fraction`` of the samples are dropped. Averages are
    unweighted over the supporting entries, summed in a canonical content
    order so permuting the samples changes nothing, exactly.
    """
    if assoc_radius <= 0.0:
        raise ValueError("assoc_radius must be positive")
    if not 0.0 <= spurious_fraction < 1.0:
        raise ValueError("spurious_fraction must be in [0, 1)")
    n_samples = len(trace_landmark_lists)
    if n_samples == 0:
        raise ValueError("need at least one sample")

    total = sum(len(lms) for lms in trace_landmark_lists)
    if total == 0:
        return MapEstimate(landmarks=(), clutter_rate_estimate=clutter_rate_estimate)
    sample_idx = np.empty(total, dtype=np.int64)
    positions = np.empty((total, 2))
    extents = np.empty((total, 2, 2))
    weights = np.empty(total)
    row = 0
    for s, landmarks in enumerate(trace_landmark_lists):
        for lm in landmarks:
            sample_idx[row] = s
            positions[row] = lm.position
            extents[row] = lm.extent
            weights[row] = lm.weight
            row += 1

    comp = _radius_components(positions, assoc_radius)
    order = np.lexsort(
        (
            extents[:, 1, 1], extents[:, 0, 1], extents[:, 0, 0],
            weights, positions[:, 1], positions[:, 0], comp,
        )
    )
    comp_sorted = comp[order]
    bounds = np.flatnonzero(np.diff(comp_sorted)) + 1
    segments = np.split(order, bounds)

    results = []
    for seg in segments:
        support = np.unique(sample_idx[seg]).size / n_samples
        if support < spurious_fraction:
            continue
        pos = positions[seg].mean(axis=0)
        ext = extents[seg].mean(axis=0)
        wgt = float(weights[seg].mean())
        results.append(
            (
                (int(sample_idx[seg].min()), float(pos[0]), float(pos[1])),
                LandmarkEstimate(
                    position=pos, extent=ext, weight=wgt, support=float(support)
                ),
            )
        )
    results.sort(key=lambda r: r[0])
    return MapEstimate(
        landmarks=tuple(lm for _, lm in results),
        clutter_rate_estimate=clutter_rate_estimate,
    )


def estimate_map(
    trace: SampleTrace,
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    threshold: float,
    assoc_radius: float,
    spurious_fraction: float,
) -> MapEstimate:
    """Full trace-to-map pipeline: extract, associate, average, count clutter."""
    samples, clutter_counts = _process_trace(trace, batch, prior, model, threshold)
    clutter = float(np.mean(clutter_counts) / batch.scan_count)
    return associate_and_average(
        samples, assoc_radius, spurious_fraction, clutter_rate_estimate=clutter
    )


def intensity_mixture(m: MapEstimate) -> IntensityMixture:
    """One Gaussian component per landmark: (weight, position, extent)."""
    if not m.landmarks:
        return IntensityMixture.empty()
    return IntensityMixture(
        weights=np.array([lm.weight for lm in m.landmarks]),
        means=np.vstack([lm.position for lm in m.landmarks]),
        covariances=np.stack([lm.extent for lm in m.landmarks]),
    )
