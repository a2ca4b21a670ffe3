"""Configuration files and the CSV formats produced by the pipeline.

The run configuration is a single JSON document; its schema is documented
in the README. Every output file records the seed and the SHA-256 digest
of the configuration in ``#`` comment lines so any result can be traced
back to the exact inputs that produced it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimation import LandmarkEstimate, MapEstimate
from .geometry import (
    FovParams,
    MeasurementBatch,
    ModelConfig,
    PriorParams,
    Rect,
    SensorPose,
    batch_from_arrays,
)
from .sampler import SamplerConfig, SampleTrace, TraceEntry
from .scenario import GroundTruthLandmark
from .undetected import IntensityRaster


class ConfigError(ValueError):
    """Malformed or missing configuration input."""


@dataclass(frozen=True)
class EstimationConfig:
    assoc_radius: float = 1.0
    spurious_fraction: float = 0.05
    grid_resolution: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    step_count: int = 190
    landmark_count: int = 20
    lap_width: float = 150.0
    lap_height: float = 80.0
    landmark_offset: float = 10.0
    detection_rate: float = 1.5
    extent_seed: int = 7


@dataclass(frozen=True, eq=False)
class RunConfig:
    seed: int
    fov: FovParams
    model: ModelConfig
    prior: PriorParams
    sampler: SamplerConfig
    estimation: EstimationConfig
    scenario: ScenarioConfig
    digest: str = ""


DEFAULT_CONFIG = {
    "seed": 1,
    "fov": {"range": 60.0, "halfAngle": math.pi / 6.0},
    "model": {
        "pD": 1.0,
        "clutterRate": 1.0,
        "aoi": {"xmin": -70.0, "xmax": 220.0, "ymin": -70.0, "ymax": 150.0},
    },
    "prior": {
        "S0": [[5.0, 0.0], [0.0, 5.0]],
        "nu0": 5.0,
        "alpha0": 0.1,
        "beta0": 0.2,
        "lambda0u": 20.0,
    },
    "sampler": {
        "iterations": 20000,
        "burnIn": 15000,
        "thinning": 1,
        "gateDistance": 12.0,
        "existenceThreshold": 0.5,
        "selection": "random",
    },
    "estimation": {
        "assocRadius": 1.0,
        "spuriousFraction": 0.05,
        "gridResolution": 1.0,
    },
    "scenario": {
        "stepCount": 190,
        "landmarkCount": 20,
        "lapWidth": 150.0,
        "lapHeight": 80.0,
        "landmarkOffset": 10.0,
        "detectionRate": 1.5,
        "extentSeed": 7,
    },
}


def write_default_config(path) -> None:
    Path(path).write_text(json.dumps(DEFAULT_CONFIG, indent=2) + "\n")


def _need(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing key {key!r} in config section {where!r}")
    return section[key]


def parse_config(raw: dict, digest: str = "") -> RunConfig:
    try:
        fov_raw = _need(raw, "fov", "top level")
        model_raw = _need(raw, "model", "top level")
        prior_raw = _need(raw, "prior", "top level")
        fov = FovParams(
            max_range=float(_need(fov_raw, "range", "fov")),
            half_angle=float(_need(fov_raw, "halfAngle", "fov")),
        )
        aoi = _need(model_raw, "aoi", "model")
        model = ModelConfig(
            p_detect=float(_need(model_raw, "pD", "model")),
            clutter_rate=float(_need(model_raw, "clutterRate", "model")),
            aoi_bounds=Rect(
                float(_need(aoi, "xmin", "aoi")),
                float(_need(aoi, "xmax", "aoi")),
                float(_need(aoi, "ymin", "aoi")),
                float(_need(aoi, "ymax", "aoi")),
            ),
        )
        prior = PriorParams(
            extent_scale=np.asarray(_need(prior_raw, "S0", "prior"), dtype=float),
            extent_dof=float(_need(prior_raw, "nu0", "prior")),
            count_shape=float(_need(prior_raw, "alpha0", "prior")),
            count_rate=float(_need(prior_raw, "beta0", "prior")),
            undetected_rate=float(prior_raw.get("lambda0u", 0.0)),
        )
        sampler_raw = raw.get("sampler", {})
        gate = sampler_raw.get("gateDistance", math.inf)
        sampler = SamplerConfig(
            iterations=int(sampler_raw.get("iterations", 20000)),
            burn_in=int(sampler_raw.get("burnIn", 15000)),
            thinning=int(sampler_raw.get("thinning", 1)),
            seed=int(raw.get("seed", 0)),
            gate_distance=math.inf if gate in (None, "inf") else float(gate),
            existence_threshold=float(sampler_raw.get("existenceThreshold", 0.5)),
            selection=str(sampler_raw.get("selection", "random")),
        )
        est_raw = raw.get("estimation", {})
        estimation = EstimationConfig(
            assoc_radius=float(est_raw.get("assocRadius", 1.0)),
            spurious_fraction=float(est_raw.get("spuriousFraction", 0.05)),
            grid_resolution=float(est_raw.get("gridResolution", 1.0)),
        )
        scn_raw = raw.get("scenario", {})
        scenario = ScenarioConfig(
            step_count=int(scn_raw.get("stepCount", 190)),
            landmark_count=int(scn_raw.get("landmarkCount", 20)),
            lap_width=float(scn_raw.get("lapWidth", 150.0)),
            lap_height=float(scn_raw.get("lapHeight", 80.0)),
            landmark_offset=float(scn_raw.get("landmarkOffset", 10.0)),
            detection_rate=float(scn_raw.get("detectionRate", 1.5)),
            extent_seed=int(scn_raw.get("extentSeed", 7)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        seed=int(raw.get("seed", 0)),
        fov=fov,
        model=model,
        prior=prior,
        sampler=sampler,
        estimation=estimation,
        scenario=scenario,
        digest=digest,
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    data = p.read_bytes()
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, digest=hashlib.sha256(data).hexdigest())


# ----------------------------------------------------------------------
# CSV writers and readers
# ----------------------------------------------------------------------

_FMT = "%.17g"  # round-trips doubles exactly


def _f(x: float) -> str:
    return _FMT % float(x)


def _header_lines(cfg: Optional[RunConfig], extra: Optional[dict] = None) -> list:
    lines = []
    if cfg is not None:
        lines.append(f"# seed={cfg.seed}")
        lines.append(f"# configDigest={cfg.digest}")
    for key, value in (extra or {}).items():
        lines.append(f"# {key}={value}")
    return lines


def read_comments(path) -> dict:
    """Parse ``# key=value`` comment lines from the head of a file."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
    return meta


def _data_lines(path) -> list:
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def write_trajectory(path, trajectory: Sequence[SensorPose], cfg=None) -> None:
    lines = _header_lines(cfg)
    lines.append("scanIndex,x,y,heading")
    for p in trajectory:
        lines.append(f"{p.scan_index},{_f(p.x)},{_f(p.y)},{_f(p.heading)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> list:
    poses = []
    for row in _data_lines(path)[1:]:
        k, x, y, h = row.split(",")
        poses.append(SensorPose(float(x), float(y), float(h), int(k)))
    return poses


def write_measurements(path, batch: MeasurementBatch, cfg=None) -> None:
    lines = _header_lines(cfg)
    lines.append("scanIndex,x,y")
    for m in batch.measurements:
        lines.append(f"{m.scan_index},{_f(m.x)},{_f(m.y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_measurements(
    path, trajectory: Sequence[SensorPose], fov: FovParams
) -> MeasurementBatch:
    rows = _data_lines(path)[1:]
    if not rows:
        raise ValueError(f"measurement file {path} holds no measurements")
    points = np.zeros((len(rows), 2))
    scans = []
    for i, row in enumerate(rows):
        k, x, y = row.split(",")
        points[i] = (float(x), float(y))
        scans.append(int(k))
    return batch_from_arrays(points, scans, trajectory, fov)


def write_truth(path, landmarks: Sequence[GroundTruthLandmark], cfg=None) -> None:
    lines = _header_lines(cfg)
    lines.append("x,y,sxx,sxy,syy,omega")
    for lm in landmarks:
        e = lm.extent
        lines.append(
            ",".join(
                _f(v)
                for v in (
                    lm.position[0], lm.position[1],
                    e[0, 0], e[0, 1], e[1, 1], lm.detection_rate,
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_truth(path) -> list:
    out = []
    for row in _data_lines(path)[1:]:
        x, y, sxx, sxy, syy, omega = (float(v) for v in row.split(","))
        out.append(
            GroundTruthLandmark(
                position=np.array([x, y]),
                extent=np.array([[sxx, sxy], [sxy, syy]]),
                detection_rate=omega,
            )
        )
    return out


def write_labels(path, labels: np.ndarray, cfg=None) -> None:
    lines = _header_lines(cfg)
    lines.append("measurementId,sourceIndex")
    for i, lab in enumerate(labels):
        lines.append(f"{i},{int(lab)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_trace(path, trace: SampleTrace, cfg=None) -> None:
    """Header, then one ``iter;logWeight;id,cellKey;...`` record per snapshot."""
    sampler = trace.config
    lines = _header_lines(
        cfg,
        {
            "traceSeed": trace.seed,
            "iterations": sampler.iterations,
            "burnIn": sampler.burn_in,
            "thinning": sampler.thinning,
            "gateDistance": sampler.gate_distance,
            "existenceThreshold": sampler.existence_threshold,
            "acceptedMoves": trace.accepted_moves,
            "steps": trace.steps,
        },
    )
    scope = trace.scope
    for e in trace.entries:
        pairs = ";".join(
            f"{int(i)},{int(k)}" for i, k in zip(scope, e.labels)
        )
        lines.append(f"{e.iteration};{_f(e.log_weight)};{pairs}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> SampleTrace:
    meta = read_comments(path)
    entries = []
    scope = None
    for row in _data_lines(path):
        parts = row.split(";")
        iteration = int(parts[0])
        log_weight = float(parts[1])
        ids = []
        keys = []
        for pair in parts[2:]:
            i, k = pair.split(",")
            ids.append(int(i))
            keys.append(int(k))
        if scope is None:
            scope = np.asarray(ids, dtype=np.int64)
        entries.append(
            TraceEntry(
                iteration=iteration,
                labels=np.asarray(keys, dtype=np.int64),
                log_weight=log_weight,
            )
        )
    if scope is None:
        raise ValueError(f"trace file {path} holds no snapshots")
    gate = meta.get("gateDistance", "inf")
    cfg = SamplerConfig(
        iterations=int(meta.get("iterations", len(entries))),
        burn_in=int(meta.get("burnIn", 0)),
        thinning=int(meta.get("thinning", 1)),
        seed=int(meta.get("traceSeed", 0)),
        gate_distance=float(gate),
        existence_threshold=float(meta.get("existenceThreshold", 0.5)),
    )
    return SampleTrace(
        entries=entries,
        scope=scope,
        seed=cfg.seed,
        config=cfg,
        steps=int(meta.get("steps", cfg.iterations)),
        accepted_moves=int(meta.get("acceptedMoves", 0)),
    )


def write_map_estimate(path, estimate: MapEstimate, cfg=None) -> None:
    lines = _header_lines(
        cfg,
        {
            "clutterRateEstimate": _f(estimate.clutter_rate_estimate),
            "landmarkCount": len(estimate.landmarks),
        },
    )
    lines.append("x,y,sxx,sxy,syy,omega,support")
    for lm in estimate.landmarks:
        e = lm.extent
        lines.append(
            ",".join(
                _f(v)
                for v in (
                    lm.position[0], lm.position[1],
                    e[0, 0], e[0, 1], e[1, 1], lm.weight, lm.support,
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_map_estimate(path) -> MapEstimate:
    meta = read_comments(path)
    landmarks = []
    for row in _data_lines(path)[1:]:
        x, y, sxx, sxy, syy, omega, support = (float(v) for v in row.split(","))
        landmarks.append(
            LandmarkEstimate(
                position=np.array([x, y]),
                extent=np.array([[sxx, sxy], [sxy, syy]]),
                weight=omega,
                support=support,
            )
        )
    return MapEstimate(
        landmarks=tuple(landmarks),
        clutter_rate_estimate=float(meta.get("clutterRateEstimate", 0.0)),
    )


def write_raster(path, raster: IntensityRaster, cfg=None) -> None:
    g = raster.grid
    lines = _header_lines(
        cfg,
        {
            "xmin": _f(g.bounds.xmin), "xmax": _f(g.bounds.xmax),
            "ymin": _f(g.bounds.ymin), "ymax": _f(g.bounds.ymax),
            "resolution": _f(g.resolution), "nx": g.nx, "ny": g.ny,
        },
    )
    for row in raster.values:
        lines.append(",".join(_f(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_metrics(path, rows: Sequence[tuple], cfg=None, extra=None) -> None:
    lines = _header_lines(cfg, extra)
    lines.append("snapshotIter,ise,estLandmarkCount")
    for iteration, value, count in rows:
        lines.append(f"{iteration},{_f(value)},{int(count)}")
    Path(path).write_text("\n".join(lines) + "\n")
