"""Inlier comparison and sample-weight computation.

A rendered hypothesis is compared pixel-by-pixel against the observed
depth inside its bounding box. The default comparator is a plain 1D depth
difference; the 3D mode tightens the threshold by each pixel's ray
obliquity so the test is exactly the Euclidean point distance along that
pixel's ray. Either mode can run on 16-bit millimeter fixed-point codes
instead of floats.

The resulting (inliers, observed, rendered) counts combine with the
detection confidence into a weight in [0, 1]:

    weight = alpha * inliers/observed + beta * inliers/rendered + gamma * conf

where a zero denominator contributes 0 and values above 1 (possible when
inliers exceed the observed count under sensor dropout) clamp to 1 with a
logged event.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import CameraIntrinsics
from .raster import DepthBuffer

log = logging.getLogger(__name__)

MODE_DEPTH_1D = "depth_1d"
MODE_EUCLIDEAN_3D = "euclidean_3d"


@dataclass(frozen=True)
class InlierParams:
    """Inlier threshold (meters), comparison mode, and quantization switch."""

    epsilon: float = 0.01
    mode: str = MODE_DEPTH_1D
    quantize: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.mode not in (MODE_DEPTH_1D, MODE_EUCLIDEAN_3D):
            raise ValueError(f"unknown inlier mode {self.mode!r}")


@dataclass(frozen=True)
class InlierScore:
    """Counts from one box comparison: inliers, valid observed, rendered."""

    n_inlier: int
    n_observed: int
    n_rendered: int

    def __post_init__(self):
        if min(self.n_inlier, self.n_observed, self.n_rendered) < 0:
            raise ValueError("negative count")
        if self.n_inlier > self.n_rendered:
            raise ValueError("inliers cannot exceed rendered pixels")


@dataclass(frozen=True)
class WeightCoeffs:
    """Mixing coefficients for the weight terms; must sum to 1."""

    alpha: float = 0.4
    beta: float = 0.4
    gamma: float = 0.2

    def __post_init__(self):
        for v in (self.alpha, self.beta, self.gamma):
            if not 0.0 <= v <= 1.0:
                raise ValueError("coefficients must lie in [0, 1]")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ValueError("coefficients must sum to 1")


def pixel_scale(k: CameraIntrinsics, px: float, py: float) -> float:
    """Length of the unit-depth ray through pixel (px, py): sqrt(1+u^2+v^2).

    The 3D point at depth z along this ray is z * (u, v, 1), so two depths
    z1, z2 at the same pixel are exactly |z1 - z2| * scale apart.
    """
    u = (px - k.cx) / k.fx
    v = (py - k.cy) / k.fy
    return math.sqrt(1.0 + u * u + v * v)


def inlier_1d(z_obs: float, z_rend: float, eps: float) -> int:
    """1 iff the two depths are strictly within eps of each other."""
    return 1 if abs(z_obs - z_rend) < eps else 0


def inlier_3d(px: float, py: float, z_obs: float, z_rend: float,
              k: CameraIntrinsics, eps: float) -> int:
    """1 iff the two back-projected points are strictly within eps.

    Both points share the ray through (px, py), so the Euclidean test
    reduces exactly to a 1D test at threshold eps / pixel_scale.
    """
    return inlier_1d(z_obs, z_rend, eps / pixel_scale(k, px, py))


def quantize_depth(z: float) -> int:
    """Meters -> 16-bit millimeter code, round half up; saturation logged."""
    if z * 1000.0 + 0.5 > _kernels.MM_MAX:
        log.warning("depth %.3f m saturates 16-bit millimeter range", z)
    return int(_kernels.quantize_mm(z))


def dequantize_depth(q: int) -> float:
    return q / 1000.0


def score_region(rendered: DepthBuffer, observed, params: InlierParams) -> InlierScore:
    """Count inliers/observed/rendered pixels over a shared bounding box.

    ``observed`` is a DepthRegion viewing the observation image; its box
    must equal the rendered buffer's box. Pixel visitation order never
    affects the counts. Saturations in quantized mode are logged.
    """
    if rendered.box != observed.box:
        raise ValueError(f"box mismatch: {rendered.box} vs {observed.box}")
    k = observed.image.intrinsics
    counts = np.zeros(_kernels.N_COUNTS, dtype=np.int64)
    _kernels.score_region(rendered.depths, observed.image.depths,
                          rendered.box.x_min, rendered.box.y_min,
                          k.fx, k.fy, k.cx, k.cy,
                          params.epsilon, params.mode == MODE_EUCLIDEAN_3D,
                          params.quantize, counts)
    if counts[_kernels.CNT_SATURATED]:
        log.warning("%d depth values saturated during quantized scoring",
                    int(counts[_kernels.CNT_SATURATED]))
    return InlierScore(int(counts[_kernels.CNT_INLIER]),
                       int(counts[_kernels.CNT_OBSERVED]),
                       int(counts[_kernels.CNT_RENDERED]))


def compute_weight(s: InlierScore, confidence: float, w: WeightCoeffs) -> float:
    """Combine an inlier score and detection confidence into a weight.

    Zero-denominator terms contribute 0; results above 1 clamp to 1 with
    a logged clamping event.
    """
    value = w.gamma * confidence
    if s.n_observed > 0:
        value += w.alpha * s.n_inlier / s.n_observed
    if s.n_rendered > 0:
        value += w.beta * s.n_inlier / s.n_rendered
    if value > 1.0:
        log.warning("weight %.6f clamped to 1 (inliers %d > observed %d)",
                    value, s.n_inlier, s.n_observed)
        value = 1.0
    return value


def compute_weights(counts: np.ndarray, confidence: float,
                    w: WeightCoeffs) -> tuple[np.ndarray, int]:
    """Vectorized compute_weight over an (M, >=3) count array.

    Returns (weights, number of clamped samples); clamping is logged once.
    """
    n = counts[:, _kernels.CNT_INLIER].astype(np.float64)
    nb = counts[:, _kernels.CNT_OBSERVED].astype(np.float64)
    nr = counts[:, _kernels.CNT_RENDERED].astype(np.float64)
    # same summation order as compute_weight so the two agree bitwise
    with np.errstate(divide="ignore", invalid="ignore"):
        values = (w.gamma * confidence
                  + np.where(nb > 0, w.alpha * n / nb, 0.0)
                  + np.where(nr > 0, w.beta * n / nr, 0.0))
    clamped = int((values > 1.0).sum())
    if clamped:
        log.warning("%d sample weights clamped to 1", clamped)
    return np.minimum(values, 1.0), clamped
