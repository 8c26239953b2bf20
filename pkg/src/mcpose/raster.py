"""Software rasterization of posed meshes into per-pixel depth.

One call renders one pose hypothesis, restricted to that hypothesis's
bounding box; the z-buffer keeps the minimum positive depth per pixel and
empty pixels read ``EMPTY_DEPTH`` (0.0). Backface culling is optional and,
for watertight meshes with outward winding, never changes the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import _kernels
from ._kernels import EMPTY_DEPTH, NEAR_Z
from .geometry import CameraIntrinsics, RigidTransform, TriangleMesh


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel rectangle: (x_min, y_min) through (x_max, y_max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (0 <= self.x_min <= self.x_max and 0 <= self.y_min <= self.y_max):
            raise ValueError(f"invalid box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def fits(self, k: CameraIntrinsics) -> bool:
        return self.x_max < k.width and self.y_max < k.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max],
                        dtype=np.int64)

    @classmethod
    def full_image(cls, k: CameraIntrinsics) -> "BoundingBox":
        return cls(0, 0, k.width - 1, k.height - 1)


@dataclass(frozen=True)
class RasterStats:
    """Triangle-level accounting of one render."""

    triangles_in: int
    triangles_culled: int
    triangles_clipped: int
    triangles_degenerate: int
    pixels_written: int

    def __post_init__(self):
        if self.triangles_culled > self.triangles_in:
            raise ValueError("culled count exceeds input count")

    @classmethod
    def from_array(cls, a) -> "RasterStats":
        return cls(int(a[_kernels.STAT_IN]), int(a[_kernels.STAT_CULLED]),
                   int(a[_kernels.STAT_CLIPPED]), int(a[_kernels.STAT_DEGENERATE]),
                   int(a[_kernels.STAT_PIXELS]))

    @property
    def culled_fraction(self) -> float:
        return self.triangles_culled / self.triangles_in if self.triangles_in else 0.0


@dataclass(frozen=True)
class DepthBuffer:
    """Rendered depths over a box; EMPTY_DEPTH marks uncovered pixels."""

    box: BoundingBox
    depths: np.ndarray

    def __post_init__(self):
        if self.depths.shape != (self.box.height, self.box.width):
            raise ValueError("buffer shape does not match box extents")

    def iter_pixels(self) -> Iterator[tuple[int, int, float]]:
        """Yield (x, y, depth) for every covered pixel, row-major."""
        rows, cols = np.nonzero(self.depths != EMPTY_DEPTH)
        for r, c in zip(rows, cols):
            yield self.box.x_min + int(c), self.box.y_min + int(r), float(self.depths[r, c])


def face_normal(v0, v1, v2) -> np.ndarray:
    """Winding-orientated face normal (v1-v0) x (v2-v0), unnormalized.

    A zero vector flags a degenerate (collinear) triangle.
    """
    v0 = np.asarray(v0, dtype=np.float64)
    return np.cross(np.asarray(v1, dtype=np.float64) - v0,
                    np.asarray(v2, dtype=np.float64) - v0)


def is_backface(normal, view_ray) -> bool:
    """True iff the face points away from the camera (dot >= 0; edge-on culls)."""
    return float(np.dot(normal, view_ray)) >= 0.0


def rasterize_sample(mesh: TriangleMesh, t: RigidTransform, k: CameraIntrinsics,
                     box: BoundingBox, culling: bool = True,
                     on_pixel: Callable[[int, int, float], None] | None = None,
                     ) -> tuple[DepthBuffer, RasterStats]:
    """Render a posed mesh into a z-buffer restricted to ``box``.

    Depth is interpolated perspective-correctly; triangles straddling the
    near plane are clipped, not dropped, so the result is exactly the
    ``box`` crop of a full-image render. ``on_pixel`` optionally streams
    every covered pixel as (x, y, depth) after the buffer is complete.
    """
    if not box.fits(k):
        raise ValueError(f"{box} does not fit a {k.width}x{k.height} image")
    cam_verts = np.empty_like(mesh.vertices)
    _kernels.transform_verts(mesh.vertices, t.rotation, t.translation, cam_verts)
    depth = np.zeros((box.height, box.width))
    stats = np.zeros(_kernels.N_STATS, dtype=np.int64)
    _kernels.rasterize_mesh(cam_verts, mesh.faces, k.fx, k.fy, k.cx, k.cy,
                            box.x_min, box.y_min, box.x_max, box.y_max,
                            culling, depth, stats)
    buf = DepthBuffer(box, depth)
    if on_pixel is not None:
        for x, y, z in buf.iter_pixels():
            on_pixel(x, y, z)
    return buf, RasterStats.from_array(stats)


def render_full(mesh: TriangleMesh, t: RigidTransform, k: CameraIntrinsics,
                culling: bool = True) -> tuple[DepthBuffer, RasterStats]:
    """Render over the whole image; equivalent to a full-image box."""
    return rasterize_sample(mesh, t, k, BoundingBox.full_image(k), culling)
