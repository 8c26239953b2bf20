"""Generated test meshes: watertight primitives with consistent outward winding.

Five shapes cover the size/symmetry spread the estimator is exercised on:
a box, a UV sphere, a cylinder, a soda-can (squat cylinder), and an
asymmetric L-shaped prism. Each generator centers the mesh near its
centroid and winds faces so ``(v1-v0) x (v2-v0)`` points outward.

``make_mesh`` resolves ``builtin:<name>`` identifiers; ``is_symmetric``
reports whether a shape's vertex set maps onto itself under rotations
about its own axis (drives the ADD vs ADD-S choice in evaluation).
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import TriangleMesh


def _prism(polygon: np.ndarray, height: float) -> TriangleMesh:
    """Extrude a counter-clockwise simple polygon along z, centered on z=0.

    Caps are fan-triangulated from vertex 0, so the polygon must be
    star-shaped as seen from its first vertex (true for convex polygons
    and for the L cross-section below).
    """
    n = len(polygon)
    h = height / 2.0
    top = np.column_stack([polygon, np.full(n, h)])
    bot = np.column_stack([polygon, np.full(n, -h)])
    verts = np.vstack([top, bot])
    faces = []
    for i in range(1, n - 1):
        faces.append((0, i, i + 1))                  # top cap, +z out
        faces.append((n, n + i + 1, n + i))          # bottom cap, -z out
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, n + i, n + j))              # sides, radially out
        faces.append((i, n + j, j))
    return TriangleMesh(verts, np.array(faces))


def make_box(sx: float = 0.10, sy: float = 0.11, sz: float = 0.12) -> TriangleMesh:
    """Axis-aligned box centered at the origin, edge lengths in meters.

    Default edge lengths are deliberately close: a box whose faces a depth
    sensor cannot tell apart is treated as symmetric by the evaluation
    metric, which matches what the sensor can actually observe.
    """
    poly = np.array([[-sx / 2, -sy / 2], [sx / 2, -sy / 2],
                     [sx / 2, sy / 2], [-sx / 2, sy / 2]])
    return _prism(poly, sz)


def make_sphere(radius: float = 0.05, n_lat: int = 8, n_lon: int = 12) -> TriangleMesh:
    """UV sphere with poles on the z axis."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, n_lat):
        theta = math.pi * i / n_lat
        st, ct = math.sin(theta), math.cos(theta)
        for j in range(n_lon):
            phi = 2.0 * math.pi * j / n_lon
            verts.append((radius * st * math.cos(phi),
                          radius * st * math.sin(phi),
                          radius * ct))
    verts.append((0.0, 0.0, -radius))
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append((0, ring(1, j), ring(1, j + 1)))
        faces.append((south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            faces.append((ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)))
            faces.append((ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)))
    return TriangleMesh(np.array(verts), np.array(faces))


def _ngon(radius: float, n: int) -> np.ndarray:
    ang = 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def make_cylinder(radius: float = 0.045, height: float = 0.12, n_seg: int = 16) -> TriangleMesh:
    """Cylinder with its symmetry axis along z."""
    return _prism(_ngon(radius, n_seg), height)


def make_can(radius: float = 0.033, height: float = 0.11, n_seg: int = 16) -> TriangleMesh:
    """Drink-can proportions; same topology as the cylinder."""
    return _prism(_ngon(radius, n_seg), height)


def make_lshape(arm_long: float = 0.14, arm_short: float = 0.11,
                width: float = 0.05, thickness: float = 0.05) -> TriangleMesh:
    """Asymmetric L-shaped prism with arms of unequal length.

    Equal arms would give the solid an exact two-fold rotation symmetry
    about the in-plane diagonal, so the arm lengths must differ for the
    shape to be genuinely asymmetric.

    Cross-section (counter-clockwise, before centering)::

        (0,arm_short)----(width,arm_short)
          |                  |
          |     (width,width)----(arm_long,width)
          |                  .        |
        (0,0)----------------------(arm_long,0)
    """
    poly = np.array([[0.0, 0.0], [arm_long, 0.0], [arm_long, width],
                     [width, width], [width, arm_short], [0.0, arm_short]])
    poly -= _polygon_centroid(poly)
    return _prism(poly, thickness)


def _polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


_BUILDERS = {
    "box": make_box,
    "sphere": make_sphere,
    "cylinder": make_cylinder,
    "can": make_can,
    "lshape": make_lshape,
}

# Shapes with pose ambiguities a depth image cannot resolve: continuous
# axial symmetry (sphere, cylinder, can) or 180-degree flips (box). These
# are evaluated with ADD-S; only the L-shape is fully asymmetric.
_SYMMETRIC = {"box", "sphere", "cylinder", "can"}


def builtin_names() -> list[str]:
    return sorted(_BUILDERS)


def make_mesh(name: str) -> TriangleMesh:
    """Build a primitive by name; accepts either ``box`` or ``builtin:box``."""
    key = name.removeprefix("builtin:")
    if key not in _BUILDERS:
        raise KeyError(f"unknown builtin mesh {name!r}; have {builtin_names()}")
    return _BUILDERS[key]()


def is_symmetric(name: str) -> bool:
    return name.removeprefix("builtin:") in _SYMMETRIC
