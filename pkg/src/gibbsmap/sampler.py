"""Collapsed Gibbs sampling over measurement partitions.

Each step picks one measurement and redraws its cell assignment from the
exact conditional over the partitions reachable by that reassignment:
stay, join any other existing cell, or open a fresh cell. When the
measurement currently sits alone, the fresh-cell candidate duplicates
stay and is dropped so the unchanged partition is counted once.

Candidates are zeroed when the receiving cell's post-move centroid falls
outside the FOV at any scan bearing that cell's detections, or when the
measurement violates the spatial gate against every member of the target
cell. The stay candidate is never gated.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import MeasurementBatch, ModelConfig, PriorParams
from .partition import FRESH, Cell, Partition, init_singletons, sorted_insert

STAY = -2

_CHUNK = 4096  # pre-drawn random numbers per refill


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length, retention schedule, seed, and gating controls.

    ``gate_distance`` of infinity disables spatial gating. ``selection``
    is "random" (one measurement uniformly at random per step) or "sweep"
    (deterministic cyclic order), the latter kept for mixing experiments.
    """

    iterations: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    gate_distance: float = math.inf
    existence_threshold: float = 0.5
    selection: str = "random"

    def __post_init__(self) -> None:
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if not 0.0 < self.existence_threshold < 1.0:
            raise ValueError("existence_threshold must be in (0, 1)")
        if self.selection not in ("random", "sweep"):
            raise ValueError(f"unknown selection scheme {self.selection!r}")

    @property
    def snapshot_count(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass(frozen=True, eq=False)
class TraceEntry:
    """One retained chain state: iteration, canonical labels, log weight."""

    iteration: int
    labels: np.ndarray
    log_weight: float


@dataclass(eq=False)
class SampleTrace:
    """Retained snapshots of one chain (or of merged block chains)."""

    entries: list
    scope: np.ndarray
    seed: int
    config: SamplerConfig
    steps: int = 0
    accepted_moves: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __post_init__(self) -> None:
        last = 0
        for e in self.entries:
            if e.iteration <= last:
                raise ValueError("trace iterations must be strictly increasing")
            last = e.iteration


@dataclass(frozen=True, eq=False)
class Candidate:
    """One reachable partition: its target, probability, and log weight.

    ``target`` is STAY, FRESH, or an existing cell key. Gated candidates
    carry probability zero and log weight -inf.
    """

    target: int
    probability: float
    log_weight: float


class _Proposal:
    """Raw candidate scan for one measurement; internal to the kernel.

    Gated candidates are omitted here (they carry zero probability); the
    public ``transition_distribution`` adds them back explicitly.
    """

    __slots__ = ("targets", "log_weights", "cells", "remainder", "probs")

    def __init__(self, p: Partition, meas_id: int, gate_distance: float) -> None:
        src_key = int(p.assignment[meas_id])
        if src_key < 0:
            raise KeyError(f"unknown measurement id {meas_id}")
        src = p.cells[src_key]
        singleton_source = src.members.size == 1

        if singleton_source:
            self.remainder = None
            base_delta = -src.log_lik  # dissolved cell contributes likelihood one
        else:
            self.remainder = p.build_cell(src.members[src.members != meas_id])
            base_delta = self.remainder.log_lik - src.log_lik

        total = p.total_log_weight
        targets = [STAY]
        log_weights = [total]
        cells: list = [None]

        ev = p.evaluator
        if math.isfinite(gate_distance):
            # any cell with a member within the gate is a candidate target
            dx = ev.x - ev.x[meas_id]
            dy = ev.y - ev.y[meas_id]
            near = dx * dx + dy * dy <= gate_distance * gate_distance
            near &= p.assignment >= 0
            keys = np.unique(p.assignment[near])
        else:
            keys = p.cells.keys()

        for key in keys:
            key = int(key)
            if key == src_key:
                continue
            cell = p.cells[key]
            merged = sorted_insert(cell.members, meas_id)
            stats, log_lik = ev.build(merged)
            if not stats.centroid_visible:
                continue
            targets.append(key)
            log_weights.append(total + base_delta + log_lik - cell.log_lik)
            cells.append(Cell(merged, stats, log_lik))

        if not singleton_source:
            fresh = p.singleton_cell(meas_id)
            if fresh.stats.centroid_visible:
                targets.append(FRESH)
                log_weights.append(total + base_delta + fresh.log_lik)
                cells.append(fresh)

        best = max(log_weights)
        if not math.isfinite(best):
            raise AssertionError(
                "all candidates have zero weight; stay must be feasible"
            )
        weights = [math.exp(w - best) for w in log_weights]
        norm = sum(weights)
        self.targets = targets
        self.log_weights = log_weights
        self.cells = cells
        self.probs = [w / norm for w in weights]

    def choose(self, u: float) -> int:
        """Candidate index for uniform draw ``u`` by inverse CDF."""
        acc = 0.0
        for i, pr in enumerate(self.probs):
            acc += pr
            if u < acc:
                return i
        return len(self.probs) - 1


def transition_distribution(
    p: Partition, meas_id: int, gate_distance: float = math.inf
) -> list:
    """The exact conditional over partitions reachable by moving ``meas_id``.

    Returns one ``Candidate`` per action in deterministic order: stay
    first, existing cells by ascending key, fresh last (omitted when the
    source is a singleton). Gated or FOV-infeasible actions appear with
    probability zero.
    """
    meas_id = int(meas_id)
    proposal = _Proposal(p, meas_id, gate_distance)
    by_target = {
        t: (proposal.probs[i], proposal.log_weights[i])
        for i, t in enumerate(proposal.targets)
    }
    src_key = int(p.assignment[meas_id])
    singleton_source = p.cells[src_key].members.size == 1
    out = [Candidate(STAY, *by_target[STAY])]
    for key in sorted(p.cells):
        if key == src_key:
            continue
        prob, log_w = by_target.get(key, (0.0, -math.inf))
        out.append(Candidate(key, prob, log_w))
    if not singleton_source:
        prob, log_w = by_target.get(FRESH, (0.0, -math.inf))
        out.append(Candidate(FRESH, prob, log_w))
    return out


def _apply(p: Partition, meas_id: int, proposal: _Proposal, index: int) -> bool:
    """Splice the chosen candidate's pre-built cells in; True if moved."""
    target = proposal.targets[index]
    if target == STAY:
        return False
    src_key = int(p.assignment[meas_id])
    src = p.cells.pop(src_key)
    delta = -src.log_lik
    if proposal.remainder is not None:
        delta += proposal.remainder.log_lik
        p._install(proposal.remainder)
    new_cell = proposal.cells[index]
    if target != FRESH:
        old = p.cells.pop(int(target))
        delta += new_cell.log_lik - old.log_lik
    else:
        delta += new_cell.log_lik
    p._install(new_cell)
    p.total_log_weight += delta
    return True


def _step(p: Partition, meas_id: int, u: float, gate_distance: float) -> bool:
    proposal = _Proposal(p, meas_id, gate_distance)
    return _apply(p, meas_id, proposal, proposal.choose(u))


def gibbs_step(
    p: Partition, rng: np.random.Generator, gate_distance: float = math.inf
) -> Partition:
    """Select one measurement uniformly at random and redraw its assignment."""
    meas_id = int(p.scope[rng.integers(0, p.scope.size)])
    _step(p, meas_id, float(rng.random()), gate_distance)
    return p


def chain_rng(seed: int, block_index: int = 0) -> np.random.Generator:
    """Counter-based generator stream for one chain; blocks derive by XOR."""
    return np.random.Generator(np.random.Philox(key=seed ^ block_index))


def run_chain(
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    cfg: SamplerConfig,
    scope: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
    progress: Optional[Callable[[int, float, float], None]] = None,
) -> SampleTrace:
    """Run one chain from the all-singletons initialization.

    Records every ``thinning``-th state after ``burn_in``. Identical
    (seed, inputs) produce a bit-identical trace. ``progress`` is called
    every 10000 iterations with (iteration, log weight, accepted rate).
    """
    p = init_singletons(batch, prior, model, scope)
    if rng is None:
        rng = chain_rng(cfg.seed)
    n = int(p.scope.size)
    sweep = cfg.selection == "sweep"

    entries: list = []
    accepted = 0
    picks = np.empty(0, dtype=np.int64)
    draws = np.empty(0)
    cursor = _CHUNK
    for it in range(1, cfg.iterations + 1):
        if cursor >= draws.size:
            if not sweep:
                picks = rng.integers(0, n, size=_CHUNK)
            draws = rng.random(_CHUNK)
            cursor = 0
        meas_id = (
            int(p.scope[(it - 1) % n]) if sweep else int(p.scope[picks[cursor]])
        )
        if _step(p, meas_id, float(draws[cursor]), cfg.gate_distance):
            accepted += 1
        cursor += 1
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
            entries.append(
                TraceEntry(
                    iteration=it,
                    labels=p.assignment[p.scope].astype(np.int64),
                    log_weight=p.total_log_weight,
                )
            )
        if progress is not None and it % 10000 == 0:
            progress(it, p.total_log_weight, accepted / it)
    return SampleTrace(
        entries=entries,
        scope=p.scope,
        seed=cfg.seed,
        config=cfg,
        steps=cfg.iterations,
        accepted_moves=accepted,
    )


def gating_components(
    batch: MeasurementBatch, gate_distance: float
) -> list:
    """Measurement-id blocks that no feasible cell can ever straddle.

    Blocks are connected components of the graph joining measurements
    within ``gate_distance`` of each other whose scans have potentially
    overlapping FOVs (sensor positions closer than twice the range; a
    conservative test that never splits a joinable pair). An infinite
    gate disables the decomposition entirely: one block.
    """
    if gate_distance <= 0.0:
        raise ValueError("gate_distance must be positive")
    n = batch.size
    if n == 0:
        return []
    ids = np.arange(n, dtype=np.int64)
    if not math.isfinite(gate_distance):
        return [ids]

    from scipy.spatial import cKDTree

    pairs = cKDTree(batch.points).query_pairs(gate_distance, output_type="ndarray")
    px, py, _ = batch._pose_arrays
    scan0 = batch.scan_indices - 1
    parent = np.arange(n, dtype=np.int64)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    reach = 2.0 * batch.fov.max_range
    for i, j in pairs:
        ki, kj = scan0[i], scan0[j]
        if math.hypot(px[ki] - px[kj], py[ki] - py[kj]) > reach:
            continue
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(int(i)) for i in ids])
    return [ids[roots == r] for r in np.unique(roots)]


def _run_block(args) -> SampleTrace:
    batch, prior, model, cfg, scope, block_index = args
    return run_chain(
        batch, prior, model, cfg, scope=scope,
        rng=chain_rng(cfg.seed, block_index),
    )


def merge_traces(traces: Sequence[SampleTrace], cfg: SamplerConfig) -> SampleTrace:
    """Deterministically combine aligned per-block traces into one."""
    if not traces:
        raise ValueError("no traces to merge")
    counts = {len(t) for t in traces}
    if len(counts) != 1:
        raise ValueError("block traces are not aligned")
    scope = np.sort(np.concatenate([t.scope for t in traces]))
    size = int(scope.max()) + 1
    entries = []
    for row in zip(*(t.entries for t in traces)):
        labels = np.full(size, -1, dtype=np.int64)
        for t, e in zip(traces, row):
            labels[t.scope] = e.labels
        entries.append(
            TraceEntry(
                iteration=row[0].iteration,
                labels=labels[scope],
                log_weight=float(sum(e.log_weight for e in row)),
            )
        )
    return SampleTrace(
        entries=entries,
        scope=scope,
        seed=cfg.seed,
        config=cfg,
        steps=sum(t.steps for t in traces),
        accepted_moves=sum(t.accepted_moves for t in traces),
    )


def run_blocked_chains(
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    cfg: SamplerConfig,
    workers: int = 1,
    progress: Optional[Callable[[int, float, float], None]] = None,
) -> SampleTrace:
    """Decompose into gating blocks, run one chain per block, merge.

    Block chains share no mutable state; with ``workers`` > 1 they run in
    separate processes. Results are identical either way because each
    block derives its own generator stream from (seed XOR block index).
    """
    blocks = gating_components(batch, cfg.gate_distance)
    if not blocks:
        raise ValueError("cannot sample an empty batch")
    if len(blocks) == 1:
        return run_chain(
            batch, prior, model, cfg, scope=blocks[0],
            rng=chain_rng(cfg.seed, 0), progress=progress,
        )
    jobs = [(batch, prior, model, cfg, blk, i) for i, blk in enumerate(blocks)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_block, jobs))
    else:
        traces = [_run_block(j) for j in jobs]
    return merge_traces(traces, cfg)
