"""Monte-Carlo pose inference: score, resample, diffuse, repeat.

The engine keeps M pose hypotheses for one detected object. Each
iteration renders every hypothesis into its bounding box, scores the
render against the observed depth image, and converts inlier counts
into weights. If the mean weight clears the convergence threshold the
run stops and the heaviest hypothesis wins; otherwise hypotheses are
drawn anew from the weight distribution (restricted to the heaviest
top slice) and jittered with Gaussian noise before the next round.

Scoring fans out over a thread pool in contiguous index chunks. The
kernels release the GIL and consume no randomness, and chunk results
land at absolute sample indices, so results are bitwise identical for
any worker count. All randomness flows through counter-based streams
keyed by (seed, stage, iteration), never through shared mutable state.

Resampling draws each index with a coarse jump into a binned partition
of the CDF followed by a short linear scan; the access ledger records
what the two-level search cost next to what a front-to-back scan would
have cost.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import CameraIntrinsics, Pose6DoF, TriangleMesh, euler_rotation, normalize_angles
from .memmodel import AccessLedger, IterationReads, account_boxes
from .raster import BoundingBox, RasterStats
from .scene import DepthImage, Detection
from .scoring import (
    MODE_EUCLIDEAN_3D,
    InlierParams,
    InlierScore,
    WeightCoeffs,
    compute_weights,
)

log = logging.getLogger(__name__)

# Stream tags: every random draw comes from a generator seeded with
# (seed, stage, iteration), so no draw depends on scheduling or history.
STAGE_INIT = 1
STAGE_RESAMPLE = 2
STAGE_DIFFUSE = 3


class InitializationError(RuntimeError):
    """The detection box holds no usable depth evidence."""


def stage_rng(seed: int, stage: int, iteration: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, stage, iteration)))


@dataclass(frozen=True)
class EngineConfig:
    """Tuning knobs for one inference run.

    ``sigma_t``/``sigma_r`` are the translation (m) and rotation (rad)
    diffusion spreads; ``anneal`` multiplies both each iteration (1.0
    keeps them constant). ``top_percent`` restricts resampling to the
    heaviest slice of the population. ``culling`` skips triangles facing
    away from the camera during rendering.
    """

    n_samples: int = 620
    n_workers: int = 20
    sigma_t: float = 0.02
    sigma_r: float = 0.05
    convergence_tau: float = 0.65
    max_iterations: int = 50
    top_percent: float = 80.0
    n_bins: int = 64
    coeffs: WeightCoeffs = field(default_factory=WeightCoeffs)
    inlier: InlierParams = field(default_factory=InlierParams)
    culling: bool = True
    anneal: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.n_workers < 1:
            raise ValueError("n_workers must be at least 1")
        if not 0.0 < self.top_percent <= 100.0:
            raise ValueError("top_percent must lie in (0, 100]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("diffusion spreads must be nonnegative")
        if self.n_bins < 1:
            raise ValueError("n_bins must be at least 1")
        if self.anneal <= 0:
            raise ValueError("anneal factor must be positive")


@dataclass(frozen=True)
class Sample:
    """One hypothesis: pose, weight, render box, and last inlier score."""

    pose: Pose6DoF
    weight: float
    box: BoundingBox
    score: InlierScore


class SampleSet:
    """M hypotheses as parallel arrays; index to get a Sample record.

    poses are (M, 6) rows (x, y, z, roll, pitch, yaw), boxes (M, 4)
    inclusive pixel rectangles, counts (M, 4) raw score tallies.
    """

    __slots__ = ("poses", "weights", "boxes", "counts")

    def __init__(self, m: int):
        if m < 1:
            raise ValueError("a sample set needs at least one sample")
        self.poses = np.zeros((m, 6))
        self.weights = np.zeros(m)
        self.boxes = np.zeros((m, 4), dtype=np.int64)
        self.counts = np.zeros((m, _kernels.N_COUNTS), dtype=np.int64)

    def __len__(self) -> int:
        return self.poses.shape[0]

    def __getitem__(self, i: int) -> Sample:
        c = self.counts[i]
        return Sample(pose=Pose6DoF.from_array(self.poses[i]),
                      weight=float(self.weights[i]),
                      box=BoundingBox(*(int(v) for v in self.boxes[i])),
                      score=InlierScore(int(c[_kernels.CNT_INLIER]),
                                        int(c[_kernels.CNT_OBSERVED]),
                                        int(c[_kernels.CNT_RENDERED])))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


class PingPongStore:
    """Two alternating SampleSet buffers.

    Resampling reads the active buffer and writes the other, then the
    roles swap, so a source pose is never overwritten mid-draw.
    """

    def __init__(self, m: int):
        self._buffers = (SampleSet(m), SampleSet(m))
        self.active_slot = 0

    @property
    def active(self) -> SampleSet:
        return self._buffers[self.active_slot]

    @property
    def spare(self) -> SampleSet:
        return self._buffers[1 - self.active_slot]

    def flip(self) -> None:
        self.active_slot = 1 - self.active_slot


def initialize_samples(det: Detection, k: CameraIntrinsics, obs: DepthImage,
                       cfg: EngineConfig, rng: np.random.Generator | None = None,
                       ) -> SampleSet:
    """Seed M hypotheses from the detection evidence.

    Translations back-project uniform pixels of the detection box at
    depths uniform over the box's observed depth range widened by 10 cm
    each way; orientations are uniform. Every sample starts at weight
    1/M with the detection box as its render box.
    """
    if rng is None:
        rng = stage_rng(cfg.seed, STAGE_INIT)
    in_box = obs.region(det.box).values
    valid = in_box[in_box > 0]
    if valid.size == 0:
        raise InitializationError(
            f"detection box {det.box} contains no valid depth")
    z_lo = max(_kernels.NEAR_Z, float(valid.min()) - 0.1)
    z_hi = float(valid.max()) + 0.1
    m = cfg.n_samples
    u = rng.random((m, 6))
    s = SampleSet(m)
    b = det.box
    px = b.x_min + u[:, 0] * (b.x_max + 1 - b.x_min)
    py = b.y_min + u[:, 1] * (b.y_max + 1 - b.y_min)
    z = z_lo + u[:, 2] * (z_hi - z_lo)
    s.poses[:, 0] = (px - k.cx) * z / k.fx
    s.poses[:, 1] = (py - k.cy) * z / k.fy
    s.poses[:, 2] = z
    s.poses[:, 3:6] = normalize_angles(-math.pi + u[:, 3:6] * (2.0 * math.pi))
    s.weights[:] = 1.0 / m
    s.boxes[:] = b.as_array()
    return s


def _chunk_bounds(m: int, n_workers: int) -> list[tuple[int, int]]:
    n = min(n_workers, m)
    edges = [m * i // n for i in range(n + 1)]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def score_all(samples: SampleSet, mesh: TriangleMesh, k: CameraIntrinsics,
              obs: DepthImage, cfg: EngineConfig, confidence: float,
              ledger: AccessLedger | None = None,
              executor: ThreadPoolExecutor | None = None) -> RasterStats:
    """Render and score every hypothesis; update weights in place.

    The chunk layout never changes the arithmetic: every sample is
    rendered into a freshly cleared region and scored independently, so
    weights are bitwise identical for any worker count.
    """
    rots = euler_rotation(samples.poses[:, 3], samples.poses[:, 4],
                          samples.poses[:, 5])
    trans = np.ascontiguousarray(samples.poses[:, 0:3])
    p = cfg.inlier
    mode3d = p.mode == MODE_EUCLIDEAN_3D

    def run_chunk(bounds):
        start, stop = bounds
        stats = np.zeros(_kernels.N_STATS, dtype=np.int64)
        _kernels.score_samples_batch(
            mesh.vertices, mesh.faces, rots, trans, samples.boxes, obs.depths,
            k.fx, k.fy, k.cx, k.cy, cfg.culling,
            p.epsilon, mode3d, p.quantize,
            start, stop, samples.counts, stats)
        return stats

    chunks = _chunk_bounds(len(samples), cfg.n_workers)
    if executor is None or len(chunks) == 1:
        stat_arrays = [run_chunk(c) for c in chunks]
    else:
        stat_arrays = list(executor.map(run_chunk, chunks))
    total = np.sum(stat_arrays, axis=0)

    n_sat = int(samples.counts[:, _kernels.CNT_SATURATED].sum())
    if n_sat:
        log.warning("%d depth values saturated during quantized scoring", n_sat)
    samples.weights[:], _ = compute_weights(samples.counts, confidence, cfg.coeffs)
    if ledger is not None:
        account_boxes(ledger, samples.boxes)
    return RasterStats.from_array(total)


def sort_indices(samples: SampleSet) -> np.ndarray:
    """Permutation ordering weights descending, ties by ascending index."""
    return np.argsort(-samples.weights, kind="stable")


@dataclass(frozen=True)
class CdfIndex:
    """Resampling index over the heaviest top slice.

    ``cdf`` is the renormalized cumulative weight over ``order`` (the
    top-slice sample indices, heaviest first). ``thresholds`` split
    [0, 1] into equal bins; ``bin_start[b]`` is the first CDF position
    exceeding the bin's lower threshold, where a coarse lookup lands
    before the fine scan. ``uniform_fallback`` marks an all-zero weight
    slice replaced by a uniform distribution.
    """

    cdf: np.ndarray
    thresholds: np.ndarray
    bin_start: np.ndarray
    order: np.ndarray
    uniform_fallback: bool = False

    def __post_init__(self):
        if self.cdf.ndim != 1 or self.cdf.size == 0:
            raise ValueError("cdf must be a nonempty vector")
        if np.any(np.diff(self.cdf) < 0):
            raise ValueError("cdf must be nondecreasing")
        if abs(self.cdf[-1] - 1.0) > 1e-9:
            raise ValueError("cdf must end at 1")
        d = np.diff(self.thresholds)
        if self.thresholds[0] != 0.0 or self.thresholds[-1] != 1.0 or np.any(d <= 0):
            raise ValueError("thresholds must increase strictly from 0 to 1")
        if self.order.shape != self.cdf.shape:
            raise ValueError("order and cdf must have matching length")


def top_count(m: int, top_percent: float) -> int:
    return min(m, max(1, math.ceil(top_percent / 100.0 * m)))


def build_cdf(samples: SampleSet, order: np.ndarray, top_percent: float,
              n_bins: int = 64) -> CdfIndex:
    """Cumulative distribution over the heaviest top_percent of samples.

    All-zero slices fall back to uniform selection (flagged) so the
    population can never go extinct. The last CDF entry is forced to
    exactly 1.0 to keep the final bin closed under float roundoff.
    """

    kk = top_count(len(samples), top_percent)
    top = np.ascontiguousarray(order[:kk])
    w = samples.weights[top]
    total = float(w.sum())
    fallback = not total > 0.0
    if fallback:
        log.warning("all %d top weights are zero; resampling uniformly", kk)
        cdf = np.arange(1, kk + 1, dtype=np.float64) / kk
    else:
        cdf = np.cumsum(w) / total
    # roundoff can leave the tail a hair under 1, which would orphan
    # draws of r just below 1; pinning it is safe because the array is
    # nondecreasing and every earlier entry is at most the true tail
    cdf[-1] = 1.0
    thresholds = np.linspace(0.0, 1.0, n_bins + 1)
    bin_start = np.minimum(
        np.searchsorted(cdf, thresholds[:-1], side="right"), kk - 1)
    return CdfIndex(cdf=cdf, thresholds=thresholds,
                    bin_start=bin_start.astype(np.int64),
                    order=top, uniform_fallback=fallback)


def resample_index(idx: CdfIndex, r: float,
                   ledger: AccessLedger | None = None) -> int:
    """Draw one sample index for quantile r, counting CDF reads.

    Returns the original sample index (the CDF position resolves through
    ``order``). Equivalent to scanning the CDF front to back for the
    first entry exceeding r; the ledger logs the two-level search cost
    and what that scan would have cost.
    """
    if not 0.0 <= r < 1.0:
        raise ValueError(f"quantile must lie in [0, 1), got {r}")
    rs = np.array([r])
    pos = np.empty(1, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    _kernels.resample_search_batch(idx.cdf, idx.bin_start, rs, pos, counters)
    if ledger is not None:
        ledger.record_cdf_reads(coarse=int(counters[0]), fine=int(counters[1]),
                                naive=int(counters[2]))
    return int(idx.order[pos[0]])


def diffuse(pose: Pose6DoF, sigma_t: float, sigma_r: float,
            rng: np.random.Generator) -> Pose6DoF:
    """Jitter a pose with independent Gaussian noise per component."""
    if sigma_t < 0 or sigma_r < 0:
        raise ValueError("diffusion spreads must be nonnegative")
    n = rng.standard_normal(6)
    return Pose6DoF(pose.x + sigma_t * n[0], pose.y + sigma_t * n[1],
                    pose.z + sigma_t * n[2], pose.roll + sigma_r * n[3],
                    pose.pitch + sigma_r * n[4], pose.yaw + sigma_r * n[5])


def recompute_boxes(samples: SampleSet, mesh: TriangleMesh,
                    k: CameraIntrinsics) -> None:
    """Tighten each render box to its hypothesis' projected bounds."""
    rots = euler_rotation(samples.poses[:, 3], samples.poses[:, 4],
                          samples.poses[:, 5])
    trans = np.ascontiguousarray(samples.poses[:, 0:3])
    _kernels.project_bounds_batch(mesh.vertices, rots, trans,
                                  k.fx, k.fy, k.cx, k.cy,
                                  k.width, k.height, samples.boxes)


def resample_and_diffuse(store: PingPongStore, mesh: TriangleMesh,
                         k: CameraIntrinsics, cfg: EngineConfig,
                         iteration: int,
                         ledger: AccessLedger | None = None) -> SampleSet:
    """Draw the next generation into the spare buffer and swap.

    Selection uses the two-level CDF search over the sorted top slice;
    every new pose is diffused, reset to weight 1/M, and given a fresh
    render box from its own projected bounds.
    """
    src = store.active
    dst = store.spare
    m = len(src)
    order = sort_indices(src)
    idx = build_cdf(src, order, cfg.top_percent, cfg.n_bins)

    rs = stage_rng(cfg.seed, STAGE_RESAMPLE, iteration).random(m)
    pos = np.empty(m, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    _kernels.resample_search_batch(idx.cdf, idx.bin_start, rs, pos, counters)
    if ledger is not None:
        ledger.record_cdf_reads(coarse=int(counters[0]), fine=int(counters[1]),
                                naive=int(counters[2]))
    chosen = idx.order[pos]

    scale = cfg.anneal ** iteration
    noise = stage_rng(cfg.seed, STAGE_DIFFUSE, iteration).standard_normal((m, 6))
    dst.poses[:, 0:3] = src.poses[chosen, 0:3] + cfg.sigma_t * scale * noise[:, 0:3]
    dst.poses[:, 3:6] = normalize_angles(
        src.poses[chosen, 3:6] + cfg.sigma_r * scale * noise[:, 3:6])
    dst.weights[:] = 1.0 / m
    dst.counts[:] = 0
    recompute_boxes(dst, mesh, k)
    store.flip()
    return store.active


@dataclass(frozen=True)
class IterationStats:
    """Weights and read accounting for one scored iteration."""

    iteration: int
    mean_weight: float
    max_weight: float
    n_inliers: int
    reads: IterationReads
    wall_time_s: float

    def to_json_dict(self) -> dict:
        # wall time stays out: the record must be identical across
        # machines and worker counts for a fixed seed
        r = self.reads
        return {"iteration": self.iteration,
                "mean_weight": self.mean_weight,
                "max_weight": self.max_weight,
                "inliers": self.n_inliers,
                "depth_reads_naive": r.naive_depth_reads,
                "depth_reads_shared": r.shared_depth_reads,
                "cdf_reads_coarse": r.cdf_coarse_reads,
                "cdf_reads_fine": r.cdf_fine_reads,
                "cdf_reads_naive": r.cdf_naive_reads}


@dataclass(frozen=True)
class EstimateResult:
    """Final pose estimate with its per-iteration history."""

    best_pose: Pose6DoF
    best_weight: float
    iterations_run: int
    converged: bool
    per_iteration_stats: tuple[IterationStats, ...]

    def to_json_dict(self) -> dict:
        return {"pose": [self.best_pose.x, self.best_pose.y, self.best_pose.z,
                         self.best_pose.roll, self.best_pose.pitch,
                         self.best_pose.yaw],
                "weight": self.best_weight,
                "iterations": self.iterations_run,
                "converged": self.converged,
                "per_iteration": [s.to_json_dict()
                                  for s in self.per_iteration_stats]}


def run_inference(det: Detection, mesh: TriangleMesh, k: CameraIntrinsics,
                  obs: DepthImage, cfg: EngineConfig,
                  ledger: AccessLedger | None = None,
                  trace_cb=None) -> EstimateResult:
    """Full inference loop for one detection.

    Score, test mean weight against the convergence threshold, then
    resample and diffuse; the winner is the heaviest hypothesis of the
    last scored generation. Results depend only on (inputs, config,
    seed), never on worker count or timing. ``trace_cb`` receives each
    IterationStats as it closes.
    """
    if ledger is None:
        ledger = AccessLedger()
    store = PingPongStore(cfg.n_samples)
    first = initialize_samples(det, k, obs, cfg)
    active = store.active
    active.poses[:] = first.poses
    active.weights[:] = first.weights
    active.boxes[:] = first.boxes

    executor = None
    stats_list: list[IterationStats] = []
    try:
        if cfg.n_workers > 1:
            executor = ThreadPoolExecutor(max_workers=cfg.n_workers)
        iterations_run = 0
        converged = False
        while True:
            t0 = time.perf_counter()
            active = store.active
            score_all(active, mesh, k, obs, cfg, det.confidence,
                      ledger, executor)
            iterations_run += 1
            mean_w = float(active.weights.mean())
            max_i = int(np.argmax(active.weights))
            converged = mean_w > cfg.convergence_tau
            last = converged or iterations_run >= cfg.max_iterations
            if not last:
                # key the draw streams by the iteration just scored
                resample_and_diffuse(store, mesh, k, cfg,
                                     iterations_run - 1, ledger)
            snap = ledger.end_iteration()
            stat = IterationStats(
                iteration=iterations_run - 1,
                mean_weight=mean_w,
                max_weight=float(active.weights[max_i]),
                n_inliers=int(active.counts[:, _kernels.CNT_INLIER].sum()),
                reads=snap,
                wall_time_s=time.perf_counter() - t0)
            stats_list.append(stat)
            if trace_cb is not None:
                trace_cb(stat)
            if last:
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    best = active[max_i]
    return EstimateResult(best_pose=best.pose, best_weight=best.weight,
                          iterations_run=iterations_run, converged=converged,
                          per_iteration_stats=tuple(stats_list))
