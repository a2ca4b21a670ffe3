"""Command-line pipeline: simulate, sample, estimate, evaluate.

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
All randomness flows from the single seed in the configuration (CLI
``--seed`` overrides); every output file records the seed and config
digest so results are auditable.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import configio
from .configio import ConfigError, RunConfig
from .estimation import estimate_map, intensity_mixture, trace_landmarks
from .metrics import ise
from .sampler import run_blocked_chains
from .scenario import default_scenario, simulate, truth_mixture_arrays
from .estimation import IntensityMixture
from .undetected import make_grid, undetected_raster, visit_counts

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _load_config(path, seed=None) -> RunConfig:
    cfg = configio.load_config(path)
    if seed is not None:
        cfg = dataclasses.replace(
            cfg,
            seed=int(seed),
            sampler=dataclasses.replace(cfg.sampler, seed=int(seed)),
        )
    return cfg


def _build_scenario(cfg: RunConfig):
    s = cfg.scenario
    return default_scenario(
        step_count=s.step_count,
        landmark_count=s.landmark_count,
        lap_width=s.lap_width,
        lap_height=s.lap_height,
        landmark_offset=s.landmark_offset,
        detection_rate=s.detection_rate,
        fov=cfg.fov,
        model=cfg.model,
        extent_seed=s.extent_seed,
    )


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = _build_scenario(cfg)
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    batch, labels = simulate(scenario, rng)
    configio.write_trajectory(out / "trajectory.csv", scenario.trajectory, cfg)
    configio.write_measurements(out / "measurements.csv", batch, cfg)
    configio.write_truth(out / "truth_landmarks.csv", scenario.landmarks, cfg)
    configio.write_labels(out / "truth_labels.csv", labels, cfg)
    print(
        f"simulated {batch.scan_count} scans, {batch.size} measurements, "
        f"{len(scenario.landmarks)} landmarks -> {out}"
    )
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args.config, args.seed)
    sampler = cfg.sampler
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.burn_in is not None:
        overrides["burn_in"] = args.burn_in
    if args.thinning is not None:
        overrides["thinning"] = args.thinning
    if args.gate is not None:
        overrides["gate_distance"] = args.gate
    if overrides:
        sampler = dataclasses.replace(sampler, **overrides)

    trajectory = configio.read_trajectory(_trajectory_path(args))
    batch = configio.read_measurements(args.measurements, trajectory, cfg.fov)

    def progress(iteration, log_weight, accept_rate):
        print(
            f"iter {iteration}: logWeight={log_weight:.3f} "
            f"acceptedMoveRate={accept_rate:.4f}",
            flush=True,
        )

    trace = run_blocked_chains(
        batch, cfg.prior, cfg.model, sampler,
        workers=args.workers, progress=progress,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configio.write_trace(out / "trace.csv", trace, cfg)
    rate = trace.accepted_moves / max(trace.steps, 1)
    print(
        f"sampled {trace.steps} steps over {len(trace)} snapshots, "
        f"acceptedMoveRate={rate:.4f} -> {out / 'trace.csv'}"
    )
    return 0


def _trajectory_path(args) -> Path:
    if args.trajectory is not None:
        return Path(args.trajectory)
    return Path(args.measurements).parent / "trajectory.csv"


def cmd_estimate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    est = cfg.estimation
    threshold = (
        args.threshold
        if args.threshold is not None
        else cfg.sampler.existence_threshold
    )
    assoc = args.assoc_radius if args.assoc_radius is not None else est.assoc_radius
    spurious = (
        args.spurious_fraction
        if args.spurious_fraction is not None
        else est.spurious_fraction
    )
    grid_res = args.grid_res if args.grid_res is not None else est.grid_resolution

    trajectory = configio.read_trajectory(_trajectory_path(args))
    batch = configio.read_measurements(args.measurements, trajectory, cfg.fov)
    trace = configio.read_trace(args.trace)

    estimate = estimate_map(
        trace, batch, cfg.prior, cfg.model, threshold, assoc, spurious
    )
    grid = make_grid(cfg.model.aoi_bounds, grid_res)
    visits = visit_counts(trajectory, cfg.fov, grid)
    raster = undetected_raster(cfg.prior, cfg.model, visits, grid)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configio.write_map_estimate(out / "map_estimate.csv", estimate, cfg)
    configio.write_raster(out / "undetected_raster.csv", raster, cfg)
    print(
        f"estimated {len(estimate.landmarks)} landmarks, "
        f"clutterRateEstimate={estimate.clutter_rate_estimate:.4f} -> {out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    truth_landmarks = configio.read_truth(args.truth)
    if not truth_landmarks:
        raise ValueError("truth file holds no landmarks")
    weights = np.array([lm.detection_rate for lm in truth_landmarks])
    means = np.vstack([lm.position for lm in truth_landmarks])
    covs = np.stack([lm.extent for lm in truth_landmarks])
    truth_mix = IntensityMixture(weights, means, covs)

    estimate = configio.read_map_estimate(args.estimate)
    est_mix = intensity_mixture(estimate)
    final_ise = ise(truth_mix, est_mix)

    rows = []
    cfg = None
    if args.trace is not None:
        if args.config is None or args.measurements is None:
            raise ConfigError(
                "--trace requires --config and --measurements to rebuild maps"
            )
        cfg = _load_config(args.config, args.seed)
        trajectory = configio.read_trajectory(_trajectory_path(args))
        batch = configio.read_measurements(args.measurements, trajectory, cfg.fov)
        trace = configio.read_trace(args.trace)
        if args.stride > 1:
            trace.entries = trace.entries[:: args.stride]
        threshold = cfg.sampler.existence_threshold
        samples = trace_landmarks(trace, batch, cfg.prior, cfg.model, threshold)
        for entry, landmarks in zip(trace.entries, samples):
            if landmarks:
                mix = IntensityMixture(
                    np.array([lm.weight for lm in landmarks]),
                    np.vstack([lm.position for lm in landmarks]),
                    np.stack([lm.extent for lm in landmarks]),
                )
            else:
                mix = IntensityMixture.empty()
            rows.append((entry.iteration, ise(truth_mix, mix), len(landmarks)))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configio.write_metrics(
        out / "metrics.csv",
        rows,
        cfg,
        extra={
            "finalIse": "%.17g" % final_ise,
            "trueLandmarkCount": len(truth_landmarks),
            "estLandmarkCount": len(estimate.landmarks),
            "cardinalityError": len(estimate.landmarks) - len(truth_landmarks),
        },
    )
    print(
        f"finalIse={final_ise:.6g} trueCount={len(truth_landmarks)} "
        f"estCount={len(estimate.landmarks)} -> {out / 'metrics.csv'}"
    )
    return 0


def cmd_init_config(args) -> int:
    path = Path(args.path)
    if path.exists() and not args.force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    configio.write_default_config(path)
    print(f"wrote default config to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gibbsmap",
        description=(
            "Reconstruct a map of elliptical landmarks from cluttered 2-D "
            "detections by Gibbs sampling over measurement partitions."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic scenario")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.set_defaults(func=cmd_simulate)

    smp = sub.add_parser("sample", help="run the partition sampler")
    smp.add_argument("--measurements", required=True)
    smp.add_argument("--trajectory", default=None)
    smp.add_argument("--config", required=True)
    smp.add_argument("--out", required=True)
    smp.add_argument("--seed", type=int, default=None)
    smp.add_argument("--iterations", type=int, default=None)
    smp.add_argument("--burn-in", type=int, default=None, dest="burn_in")
    smp.add_argument("--thinning", type=int, default=None)
    smp.add_argument("--gate", type=float, default=None)
    smp.add_argument("--workers", type=int, default=1)
    smp.set_defaults(func=cmd_sample)

    est = sub.add_parser("estimate", help="turn a trace into a map estimate")
    est.add_argument("--trace", required=True)
    est.add_argument("--measurements", required=True)
    est.add_argument("--trajectory", default=None)
    est.add_argument("--config", required=True)
    est.add_argument("--out", required=True)
    est.add_argument("--seed", type=int, default=None)
    est.add_argument("--threshold", type=float, default=None)
    est.add_argument("--assoc-radius", type=float, default=None, dest="assoc_radius")
    est.add_argument(
        "--spurious-fraction", type=float, default=None, dest="spurious_fraction"
    )
    est.add_argument("--grid-res", type=float, default=None, dest="grid_res")
    est.set_defaults(func=cmd_estimate)

    ev = sub.add_parser("evaluate", help="score an estimate against ground truth")
    ev.add_argument("--estimate", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--trace", default=None)
    ev.add_argument("--measurements", default=None)
    ev.add_argument("--trajectory", default=None)
    ev.add_argument("--config", default=None)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--stride", type=int, default=1)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    init = sub.add_parser("init-config", help="write the default configuration")
    init.add_argument("path")
    init.add_argument("--force", action="store_true")
    init.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
