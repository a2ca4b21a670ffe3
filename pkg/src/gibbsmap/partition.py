"""Partitions of measurement ids with cached statistics and log-likelihoods.

A partition groups every in-scope measurement into disjoint non-empty
cells. Cells are keyed canonically by their smallest member id, so two
partitions are equal exactly when their assignment vectors are equal.
The cached total log weight is maintained incrementally across moves;
``recompute_log_weight`` rebuilds it from scratch for verification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .conjugacy import CellEvaluator, CellStats
from .geometry import MeasurementBatch, ModelConfig, PriorParams

FRESH = -1
ENUMERATION_CAP = 12  # Bell(12) = 4,213,597 partitions


@dataclass(frozen=True, eq=False)
class Cell:
    """One cell: sorted member ids plus cached statistics and likelihood."""

    members: np.ndarray
    stats: CellStats
    log_lik: float

    @property
    def key(self) -> int:
        return int(self.members[0])


class Partition:
    """Mutable partition state confined to a single worker.

    ``assignment[i]`` is the canonical key of the cell holding measurement
    ``i``, or -1 for measurements outside this partition's scope (scoped
    partitions are used for independent gating blocks).
    """

    __slots__ = ("batch", "prior", "model", "scope", "assignment", "cells",
                 "total_log_weight", "evaluator")

    def __init__(
        self,
        batch: MeasurementBatch,
        prior: PriorParams,
        model: ModelConfig,
        scope: Optional[Sequence[int]] = None,
        evaluator: Optional[CellEvaluator] = None,
    ) -> None:
        self.batch = batch
        self.prior = prior
        self.model = model
        if scope is None:
            scope = np.arange(batch.size, dtype=np.int64)
        else:
            scope = np.asarray(sorted(int(i) for i in scope), dtype=np.int64)
        if scope.size == 0:
            raise ValueError("partition scope must be non-empty")
        self.scope = scope
        self.assignment = np.full(batch.size, -1, dtype=np.int64)
        self.cells: dict[int, Cell] = {}
        self.total_log_weight = 0.0
        self.evaluator = evaluator or CellEvaluator(batch, prior, model)

    # ------------------------------------------------------------------
    # cell construction
    # ------------------------------------------------------------------

    def build_cell(self, member_ids: np.ndarray) -> Cell:
        """Build a cell with fresh statistics and cached log-likelihood."""
        ids = np.asarray(member_ids, dtype=np.int64)
        if ids.size == 1:
            return self.singleton_cell(int(ids[0]))
        stats, log_lik = self.evaluator.build(ids)
        return Cell(members=ids, stats=stats, log_lik=log_lik)

    def singleton_cell(self, meas_id: int) -> Cell:
        """Memoized one-member cell; content depends only on the id."""
        cell = self.evaluator.cell_cache.get(meas_id)
        if cell is None:
            ids = self.evaluator.id_rows[meas_id]
            stats, log_lik = self.evaluator.build(ids)
            cell = Cell(members=ids, stats=stats, log_lik=log_lik)
            self.evaluator.cell_cache[meas_id] = cell
        return cell

    def _install(self, cell: Cell) -> None:
        self.cells[cell.key] = cell
        self.assignment[cell.members] = cell.key

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def cell_of(self, meas_id: int) -> Cell:
        key = int(self.assignment[meas_id])
        if key < 0:
            raise KeyError(f"measurement {meas_id} not in partition scope")
        return self.cells[key]

    def signature(self) -> tuple:
        """Canonical identity: assignment keys over the scope, in id order."""
        return tuple(int(k) for k in self.assignment[self.scope])

    def copy(self) -> "Partition":
        p = Partition.__new__(Partition)
        p.batch = self.batch
        p.prior = self.prior
        p.model = self.model
        p.scope = self.scope
        p.assignment = self.assignment.copy()
        p.cells = dict(self.cells)
        p.total_log_weight = self.total_log_weight
        p.evaluator = self.evaluator
        return p

    def recompute_log_weight(self) -> float:
        """From-scratch total, independent of the incremental cache."""
        return float(
            sum(self.build_cell(c.members).log_lik for c in self.cells.values())
        )

    def validate(self) -> None:
        """Check disjointness, coverage, canonical keys, and cache totals."""
        seen: set[int] = set()
        for key, cell in self.cells.items():
            members = [int(i) for i in cell.members]
            if not members:
                raise AssertionError("empty cell")
            if key != min(members):
                raise AssertionError(f"cell key {key} != min member {min(members)}")
            if seen.intersection(members):
                raise AssertionError("cells are not disjoint")
            seen.update(members)
            for i in members:
                if int(self.assignment[i]) != key:
                    raise AssertionError(f"assignment mismatch for id {i}")
        if seen != {int(i) for i in self.scope}:
            raise AssertionError("cells do not cover the scope")
        total = sum(c.log_lik for c in self.cells.values())
        if abs(total - self.total_log_weight) > 1e-8 * max(1.0, abs(total)):
            raise AssertionError(
                f"cached total {self.total_log_weight} != sum {total}"
            )

    def serialize_rows(self) -> list[str]:
        """One "id,cellKey" row per in-scope measurement, in id order."""
        return [f"{int(i)},{int(self.assignment[i])}" for i in self.scope]


def init_singletons(
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    scope: Optional[Sequence[int]] = None,
    evaluator: Optional[CellEvaluator] = None,
) -> Partition:
    """Start with each measurement in its own cell."""
    if batch.size == 0:
        raise ValueError("cannot partition an empty batch")
    p = Partition(batch, prior, model, scope, evaluator)
    total = 0.0
    for i in p.scope:
        cell = p.build_cell(np.array([i], dtype=np.int64))
        p._install(cell)
        total += cell.log_lik
    p.total_log_weight = total
    return p


def from_labels(
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    labels: Sequence[int],
    scope: Optional[Sequence[int]] = None,
    evaluator: Optional[CellEvaluator] = None,
) -> Partition:
    """Build a partition from arbitrary group labels over the scope."""
    p = Partition(batch, prior, model, scope, evaluator)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != p.scope.shape[0]:
        raise ValueError("one label per in-scope measurement required")
    total = 0.0
    for lab in np.unique(labels):
        cell = p.build_cell(p.scope[labels == lab])
        p._install(cell)
        total += cell.log_lik
    p.total_log_weight = total
    return p


def sorted_insert(members: np.ndarray, meas_id: int) -> np.ndarray:
    """New sorted id array with ``meas_id`` spliced in."""
    pos = int(np.searchsorted(members, meas_id))
    out = np.empty(members.size + 1, dtype=np.int64)
    out[:pos] = members[:pos]
    out[pos] = meas_id
    out[pos + 1 :] = members[pos:]
    return out


def move_measurement(p: Partition, meas_id: int, target: int) -> Partition:
    """Move one measurement to an existing cell or to a FRESH cell.

    Only the two touched cells are rebuilt; the cached total log weight is
    updated by their deltas. A source cell emptied by the move is deleted
    and contributes likelihood one (log zero).
    """
    meas_id = int(meas_id)
    if not 0 <= meas_id < p.batch.size or p.assignment[meas_id] < 0:
        raise KeyError(f"unknown measurement id {meas_id}")
    src_key = int(p.assignment[meas_id])
    if target != FRESH and int(target) == src_key:
        raise ValueError("target must differ from the current cell (or be FRESH)")

    src = p.cells.pop(src_key)
    delta = -src.log_lik
    remaining = src.members[src.members != meas_id]
    new_src = None
    if remaining.size:
        new_src = p.build_cell(remaining)
        delta += new_src.log_lik

    if target == FRESH:
        new_tgt = p.build_cell(np.array([meas_id], dtype=np.int64))
        delta += new_tgt.log_lik
    else:
        target = int(target)
        if target not in p.cells:
            raise KeyError(f"unknown target cell {target}")
        tgt = p.cells.pop(target)
        new_tgt = p.build_cell(sorted_insert(tgt.members, meas_id))
        delta += new_tgt.log_lik - tgt.log_lik

    if new_src is not None:
        p._install(new_src)
    p._install(new_tgt)
    p.total_log_weight += delta
    return p


def log_weight(p: Partition) -> float:
    """Unnormalized log weight: the sum of cached per-cell log-likelihoods."""
    return p.total_log_weight


def restricted_growth_strings(n: int) -> Iterator[np.ndarray]:
    """Yield every set partition of ``range(n)`` as a restricted growth string.

    Labels satisfy a[0] = 0 and a[i] <= 1 + max(a[:i]); each partition of an
    n-set appears exactly once, in lexicographic string order.
    """
    if n < 1:
        return
    a = np.zeros(n, dtype=np.int64)
    b = np.ones(n, dtype=np.int64)  # b[i] = 1 + max(a[:i]) for i >= 1
    while True:
        yield a.copy()
        i = n - 1
        while i >= 1 and a[i] == b[i]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        grown = max(int(b[i]), int(a[i]) + 1)
        a[i + 1 :] = 0
        b[i + 1 :] = grown


def enumerate_partitions(
    batch: MeasurementBatch,
    prior: PriorParams,
    model: ModelConfig,
    scope: Optional[Sequence[int]] = None,
    cap: int = ENUMERATION_CAP,
) -> Iterator[Partition]:
    """Yield every partition of the batch exactly once, with caches populated.

    Exhaustive enumeration is an oracle for desk-scale instances only; the
    hard cap refuses anything beyond ``cap`` measurements.
    """
    ids = (
        np.arange(batch.size, dtype=np.int64)
        if scope is None
        else np.asarray(sorted(int(i) for i in scope), dtype=np.int64)
    )
    if ids.size > cap:
        raise ValueError(
            f"refusing to enumerate partitions of {ids.size} measurements "
            f"(cap {cap})"
        )
    evaluator = CellEvaluator(batch, prior, model)
    for labels in restricted_growth_strings(int(ids.size)):
        yield from_labels(batch, prior, model, labels, scope=ids, evaluator=evaluator)
