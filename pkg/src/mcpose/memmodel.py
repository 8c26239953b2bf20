"""Read accounting for the depth distributor and the resampling search.

Every iteration asks the observation image for the pixels inside each
sample's bounding box. A serial distributor reads each box separately
(sum of box areas); an overlap-sharing distributor reads each union
pixel once and fans it out to every sample whose box covers it. Both
counts are exact pixel tallies, so the saving is measurable without any
timing model. The same ledger also accumulates the CDF reads of the
two-level resampling search next to what a naive linear scan would
have cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._kernels import union_area
from .raster import BoundingBox


@dataclass(frozen=True)
class IterationReads:
    """Read tallies for one iteration (deltas, not cumulative)."""

    iteration: int
    naive_depth_reads: int
    shared_depth_reads: int
    cdf_coarse_reads: int = 0
    cdf_fine_reads: int = 0
    cdf_naive_reads: int = 0

    @property
    def depth_ratio(self) -> float:
        """Shared over naive depth reads; 1.0 when nothing was read."""
        if self.naive_depth_reads == 0:
            return 1.0
        return self.shared_depth_reads / self.naive_depth_reads


@dataclass
class AccessLedger:
    """Cumulative read counters plus a per-iteration snapshot trail.

    Single-writer: the engine updates it between iterations. All
    counters only ever grow, and the shared depth count can never
    exceed the naive one.
    """

    naive_depth_reads: int = 0
    shared_depth_reads: int = 0
    cdf_coarse_reads: int = 0
    cdf_fine_reads: int = 0
    cdf_naive_reads: int = 0
    snapshots: list[IterationReads] = field(default_factory=list)

    _pending: dict = field(default_factory=dict, repr=False)

    def _accumulate(self, **deltas: int) -> None:
        for name, d in deltas.items():
            if d < 0:
                raise ValueError(f"{name} delta must be nonnegative, got {d}")
            setattr(self, name, getattr(self, name) + d)
            self._pending[name] = self._pending.get(name, 0) + d

    def record_depth_reads(self, naive: int, shared: int) -> None:
        if shared > naive:
            raise ValueError("shared reads cannot exceed naive reads")
        self._accumulate(naive_depth_reads=naive, shared_depth_reads=shared)

    def record_cdf_reads(self, coarse: int, fine: int, naive: int) -> None:
        self._accumulate(cdf_coarse_reads=coarse, cdf_fine_reads=fine,
                         cdf_naive_reads=naive)

    def end_iteration(self) -> IterationReads:
        """Close the current iteration and append its delta snapshot."""
        snap = IterationReads(iteration=len(self.snapshots),
                              naive_depth_reads=self._pending.get("naive_depth_reads", 0),
                              shared_depth_reads=self._pending.get("shared_depth_reads", 0),
                              cdf_coarse_reads=self._pending.get("cdf_coarse_reads", 0),
                              cdf_fine_reads=self._pending.get("cdf_fine_reads", 0),
                              cdf_naive_reads=self._pending.get("cdf_naive_reads", 0))
        self.snapshots.append(snap)
        self._pending.clear()
        return snap


@dataclass(frozen=True)
class RegionPlan:
    """Disjoint rectangles covering a box union, each with its reader set.

    ``assignments`` pairs a sub-rectangle with the frozen set of box
    indices it serves. For any one box, its assigned sub-rectangles tile
    it exactly.
    """

    assignments: tuple[tuple[BoundingBox, frozenset[int]], ...]
    total_unique_pixels: int

    @property
    def total_naive_pixels(self) -> int:
        """What separate per-box reads would cost: each pixel once per reader."""
        return sum(rect.area * len(readers) for rect, readers in self.assignments)


def plan_distribution(boxes: Sequence[BoundingBox]) -> RegionPlan:
    """Decompose a box union into constant-coverage rectangles.

    Sweeps the x breakpoints induced by box edges; inside each x strip,
    y runs with an unchanged covering set merge into one rectangle.
    Empty input gives an empty plan.
    """
    if not boxes:
        return RegionPlan(assignments=(), total_unique_pixels=0)
    xs = sorted({e for b in boxes for e in (b.x_min, b.x_max + 1)})
    assignments: list[tuple[BoundingBox, frozenset[int]]] = []
    for x0, x1 in zip(xs, xs[1:]):
        # every box edge is a breakpoint, so a box spans a strip or misses it
        members = [i for i, b in enumerate(boxes)
                   if b.x_min <= x0 and b.x_max + 1 >= x1]
        if not members:
            continue
        ys = sorted({e for i in members
                     for e in (boxes[i].y_min, boxes[i].y_max + 1)})
        run_start = 0
        run_set: frozenset[int] = frozenset()
        for y0, y1 in zip(ys, ys[1:]):
            covering = frozenset(i for i in members
                                 if boxes[i].y_min <= y0 and boxes[i].y_max + 1 >= y1)
            if covering != run_set:
                if run_set:
                    assignments.append(
                        (BoundingBox(x0, run_start, x1 - 1, y0 - 1), run_set))
                run_start, run_set = y0, covering
        if run_set:
            assignments.append(
                (BoundingBox(x0, run_start, x1 - 1, ys[-1] - 1), run_set))
    unique = sum(rect.area for rect, _ in assignments)
    return RegionPlan(assignments=tuple(assignments), total_unique_pixels=unique)


def account_iteration(plan: RegionPlan, ledger: AccessLedger) -> AccessLedger:
    """Charge one iteration's depth reads under both distributor models."""
    ledger.record_depth_reads(naive=plan.total_naive_pixels,
                              shared=plan.total_unique_pixels)
    return ledger


def account_boxes(ledger: AccessLedger, boxes: np.ndarray) -> tuple[int, int]:
    """Fast-path accounting from an (M, 4) inclusive box array.

    Equivalent to building the full plan and calling account_iteration,
    but skips rectangle enumeration: the union size comes from a strip
    sweep. Returns (naive, shared) for this batch.
    """
    b = np.ascontiguousarray(boxes, dtype=np.int64)
    if b.ndim != 2 or b.shape[1] != 4:
        raise ValueError("expected an (M, 4) box array")
    naive = int(((b[:, 2] - b[:, 0] + 1) * (b[:, 3] - b[:, 1] + 1)).sum())
    shared = int(union_area(b)) if len(b) else 0
    ledger.record_depth_reads(naive=naive, shared=shared)
    return naive, shared


def boxes_to_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    arr = np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes],
                   dtype=np.int64)
    return arr.reshape(-1, 4)
