"""Meshes, 6DoF poses, camera models, and the projection math built on them.

Conventions, fixed for the whole package:

* Camera frame: +x right, +y down, +z into the scene. Units are meters.
* Image frame: origin at the top-left pixel; pixel (i, j) covers the unit
  square whose center is (i + 0.5, j + 0.5).
* Orientation: extrinsic X-Y-Z Euler angles, composed as
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, radians, normalized to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class InvalidPoseError(ValueError):
    """A pose contains a non-finite component."""


class BehindCameraError(ValueError):
    """A point with z <= 0 cannot be projected through the pinhole."""


class InvalidDepthError(ValueError):
    """A depth value must be strictly positive."""


class MeshParseError(ValueError):
    """Raised for malformed mesh input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def normalize_angle(angle: float) -> float:
    """Map an angle in radians onto (-pi, pi].

    Implemented with the same primitive operations as the vectorized
    :func:`normalize_angles` so both produce bitwise-equal results.
    """
    r = angle - TWO_PI * math.ceil((angle - math.pi) / TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    elif r > math.pi:
        r -= TWO_PI
    return r


def normalize_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize_angle`; bitwise-equal elementwise."""
    a = np.asarray(angles, dtype=np.float64)
    r = a - TWO_PI * np.ceil((a - math.pi) / TWO_PI)
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    return np.where(r > math.pi, r - TWO_PI, r)


@dataclass(frozen=True)
class Pose6DoF:
    """A rigid pose hypothesis: translation in meters, orientation in radians.

    Angles are normalized to (-pi, pi] on construction; non-finite fields
    raise :class:`InvalidPoseError`.
    """

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        fields = (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in fields):
            raise InvalidPoseError(f"pose has non-finite components: {fields}")
        object.__setattr__(self, "roll", normalize_angle(self.roll))
        object.__setattr__(self, "pitch", normalize_angle(self.pitch))
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Pose6DoF":
        x, y, z, roll, pitch, yaw = (float(v) for v in a)
        return cls(x, y, z, roll, pitch, yaw)


def euler_rotation(roll, pitch, yaw):
    """Rotation matrix Rz(yaw) @ Ry(pitch) @ Rx(roll), in closed form.

    Accepts scalars or equally shaped arrays; returns shape (..., 3, 3).
    The closed-form entries are shared by the scalar and batch paths so
    both produce bitwise-identical matrices.
    """
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    out = np.empty(np.broadcast(cr, cp, cy).shape + (3, 3))
    out[..., 0, 0] = cy * cp
    out[..., 0, 1] = cy * sp * sr - sy * cr
    out[..., 0, 2] = cy * sp * cr + sy * sr
    out[..., 1, 0] = sy * cp
    out[..., 1, 1] = sy * sp * sr + cy * cr
    out[..., 1, 2] = sy * sp * cr - cy * sr
    out[..., 2, 0] = -sp
    out[..., 2, 1] = cp * sr
    out[..., 2, 2] = cp * cr
    return out


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid motion: orthonormal rotation plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or tr.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err >= 1e-9 or np.linalg.det(rot) <= 0:
            raise ValueError(f"rotation is not a proper orthonormal matrix (err={err:g})")
        rot.flags.writeable = False
        tr.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))


def pose_to_transform(pose: Pose6DoF) -> RigidTransform:
    """Build the rigid transform Rz(yaw) @ Ry(pitch) @ Rx(roll) with translation (x, y, z)."""
    rot = euler_rotation(pose.roll, pose.pitch, pose.yaw)
    return RigidTransform(rot, np.array([pose.x, pose.y, pose.z]))


def transform_point(t: RigidTransform, p) -> np.ndarray:
    """Apply ``R @ p + translation`` to a single 3-vector."""
    return t.rotation @ np.asarray(p, dtype=np.float64) + t.translation


def transform_points(t: RigidTransform, pts: np.ndarray) -> np.ndarray:
    """Apply a rigid transform to an (N, 3) array of points."""
    return np.asarray(pts, dtype=np.float64) @ t.rotation.T + t.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera model: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def project_point(k: CameraIntrinsics, p) -> tuple[float, float, float]:
    """Project a camera-frame point to pixel coordinates, returning (px, py, z).

    Raises :class:`BehindCameraError` for z <= 0; triangle clipping against
    the near plane is the rasterizer's job, not this function's.
    """
    x, y, z = (float(v) for v in p)
    if z <= 0:
        raise BehindCameraError(f"point with z={z} is behind the camera")
    return x * k.fx / z + k.cx, y * k.fy / z + k.cy, z


def back_project(k: CameraIntrinsics, px: float, py: float, z: float) -> np.ndarray:
    """Lift pixel (px, py) at depth z back to a camera-frame 3D point."""
    if z <= 0:
        raise InvalidDepthError(f"depth must be positive, got {z}")
    return np.array([(px - k.cx) * z / k.fx, (py - k.cy) * z / k.fy, z])


@dataclass(frozen=True)
class TriangleMesh:
    """An indexed triangle mesh in the object frame, meters.

    ``vertices`` is (V, 3) float64 and ``faces`` is (F, 3) int64. Every face
    must reference three distinct, in-range vertices; vertices must be finite.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3 or len(verts) == 0:
            raise ValueError("vertices must be a non-empty (V, 3) array")
        if faces.ndim != 2 or faces.shape[1] != 3 or len(faces) == 0:
            raise ValueError("faces must be a non-empty (F, 3) array")
        if not np.isfinite(verts).all():
            raise ValueError("mesh contains non-finite vertex coordinates")
        if faces.min() < 0 or faces.max() >= len(verts):
            raise ValueError("face index out of range")
        if ((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])).any():
            raise ValueError("faces must reference three distinct vertices")
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)


def load_mesh(data: bytes | str) -> TriangleMesh:
    """Parse a Wavefront OBJ subset: ``v x y z`` and ``f i j k ...`` lines.

    Faces use 1-based indices and may have more than three vertices; those
    are fan-triangulated as (1,2,3), (1,3,4), ... Comments and blank lines
    are skipped, any other directive is ignored. Normals in the file are
    not used; culling relies on winding order. Errors name the line number.
    """
    import logging

    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    ignored: set[str] = set()
    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "v":
            if len(tokens) < 4:
                raise MeshParseError("vertex needs 3 coordinates", lineno)
            try:
                xyz = tuple(float(t) for t in tokens[1:4])
            except ValueError:
                raise MeshParseError(f"bad vertex coordinate in {raw!r}", lineno) from None
            if not all(math.isfinite(v) for v in xyz):
                raise MeshParseError("non-finite vertex coordinate", lineno)
            vertices.append(xyz)
        elif tag == "f":
            if len(tokens) < 4:
                raise MeshParseError("face needs at least 3 indices", lineno)
            idx = []
            for tok in tokens[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MeshParseError(f"bad face index {tok!r}", lineno) from None
                if i < 1 or i > len(vertices):
                    raise MeshParseError(f"index out of range: {i}", lineno)
                idx.append(i - 1)
            for a, b in zip(idx[1:-1], idx[2:]):
                if len({idx[0], a, b}) != 3:
                    raise MeshParseError("face repeats a vertex", lineno)
                triangles.append((idx[0], a, b))
        else:
            if tag not in ignored:
                ignored.add(tag)
                logging.getLogger(__name__).warning("ignoring OBJ directive %r", tag)
    if not vertices or not triangles:
        raise MeshParseError("mesh has no vertices or no faces")
    return TriangleMesh(np.array(vertices), np.array(triangles))


def load_mesh_file(path) -> TriangleMesh:
    with open(path, "rb") as f:
        return load_mesh(f.read())


def dump_obj(mesh: TriangleMesh) -> str:
    """Serialize a mesh back to the OBJ subset accepted by :func:`load_mesh`."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def save_mesh_file(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as f:
        f.write(dump_obj(mesh))
