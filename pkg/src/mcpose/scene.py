"""Synthetic scenes: composition, observation rendering, detections, files.

A scene is a camera plus posed objects. Rendering composes the objects'
depth images with a joint z-buffer, optionally corrupts valid pixels with
Gaussian noise, then invalidates an exact fraction of them (dropout).
``stub_detect`` stands in for an upstream object detector by reporting
each object's visible-pixel bounding box with optional edge jitter and a
sampled confidence.

File formats: depth images are 16-bit big-endian PGM (P5, maxval 65535)
holding millimeters, with a JSON sidecar for the intrinsics; scenes and
detections are JSON documents.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import primitives
from ._kernels import MM_MAX, NEAR_Z
from .geometry import CameraIntrinsics, Pose6DoF, TriangleMesh, load_mesh_file, pose_to_transform
from .raster import BoundingBox, DepthBuffer, render_full

log = logging.getLogger(__name__)

# Sub-stream tags for the scene-level random draws.
_STREAM_NOISE = 101
_STREAM_DROPOUT = 102
_STREAM_DETECT = 103

DEFAULT_CAMERA = CameraIntrinsics(fx=570.0, fy=570.0, cx=320.0, cy=240.0,
                                  width=640, height=480)


class DepthLoadError(ValueError):
    """A depth file or its sidecar is malformed or inconsistent."""


@dataclass(frozen=True)
class DepthImage:
    """Dense depth observation in meters; 0 marks invalid pixels."""

    depths: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        d = np.ascontiguousarray(self.depths, dtype=np.float64)
        if d.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("depth array does not match intrinsics dimensions")
        if d.min() < 0:
            raise ValueError("depths must be nonnegative")
        object.__setattr__(self, "depths", d)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def n_valid(self) -> int:
        return int((self.depths > 0).sum())

    def region(self, box: BoundingBox) -> "DepthRegion":
        return DepthRegion(self, box)


@dataclass(frozen=True)
class DepthRegion:
    """A bounding-box view into a DepthImage."""

    image: DepthImage
    box: BoundingBox

    def __post_init__(self):
        if not self.box.fits(self.image.intrinsics):
            raise ValueError(f"{self.box} exceeds the image bounds")

    @property
    def values(self) -> np.ndarray:
        b = self.box
        return self.image.depths[b.y_min:b.y_max + 1, b.x_min:b.x_max + 1]


@dataclass(frozen=True)
class Detection:
    """One detected object: label, image box, and detector confidence."""

    label: str
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class SceneObject:
    """A mesh reference with its ground-truth pose.

    ``mesh`` is either ``builtin:<name>`` or a file path. ``symmetric``
    controls the evaluation metric; None defers to the builtin registry
    (file meshes default to asymmetric).
    """

    mesh: str
    pose: Pose6DoF
    symmetric: bool | None = None

    def is_symmetric(self) -> bool:
        if self.symmetric is not None:
            return self.symmetric
        if self.mesh.startswith("builtin:"):
            return primitives.is_symmetric(self.mesh)
        return False


@dataclass(frozen=True)
class Scene:
    camera: CameraIntrinsics
    objects: tuple[SceneObject, ...]
    sigma_m: float = 0.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.objects:
            raise ValueError("scene needs at least one object")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.sigma_m < 0:
            raise ValueError("noise sigma must be nonnegative")


def resolve_meshes(scene: Scene, base_dir=None) -> dict[str, TriangleMesh]:
    """Load every distinct mesh the scene references, keyed by identifier."""
    out: dict[str, TriangleMesh] = {}
    for obj in scene.objects:
        if obj.mesh in out:
            continue
        if obj.mesh.startswith("builtin:"):
            out[obj.mesh] = primitives.make_mesh(obj.mesh)
        else:
            path = Path(obj.mesh)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            out[obj.mesh] = load_mesh_file(path)
    return out


def _compose(scene: Scene, meshes: dict[str, TriangleMesh]) -> list[np.ndarray]:
    """Noise-free per-object full renders, in scene object order."""
    layers = []
    for obj in scene.objects:
        buf, _ = render_full(meshes[obj.mesh], pose_to_transform(obj.pose),
                             scene.camera)
        layers.append(buf.depths)
    return layers


def _joint_min(layers: list[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(layers[0])
    for d in layers:
        take = (d > 0) & ((out == 0) | (d < out))
        out[take] = d[take]
    return out


def render_scene(scene: Scene, meshes: dict[str, TriangleMesh]) -> DepthImage:
    """Observation image: joint z-buffer, then noise, then exact dropout."""
    depths = _joint_min(_compose(scene, meshes))
    flat = depths.ravel()
    valid = np.flatnonzero(flat > 0)
    if scene.sigma_m > 0 and valid.size:
        rng = np.random.default_rng(np.random.SeedSequence((scene.seed, _STREAM_NOISE)))
        flat[valid] += rng.normal(0.0, scene.sigma_m, size=valid.size)
        # noise must not turn a valid pixel into the invalid marker
        flat[valid] = np.maximum(flat[valid], NEAR_Z)
    if scene.dropout > 0 and valid.size:
        rng = np.random.default_rng(np.random.SeedSequence((scene.seed, _STREAM_DROPOUT)))
        n_drop = int(scene.dropout * valid.size)
        flat[rng.choice(valid, size=n_drop, replace=False)] = 0.0
    return DepthImage(depths, scene.camera)


def stub_detect(scene: Scene, meshes: dict[str, TriangleMesh],
                jitter: int = 0, conf_range: tuple[float, float] = (0.7, 0.95),
                ) -> list[Detection]:
    """Ground-truth detections: visible-pixel boxes with jittered edges.

    Visibility comes from the noise-free geometry: a pixel belongs to an
    object iff that object is front-most there. Fully occluded objects
    are omitted with a warning, like a missed detection. Labels are
    ``obj<i>`` in scene order.
    """
    layers = _compose(scene, meshes)
    joint = _joint_min(layers)
    k = scene.camera
    rng = np.random.default_rng(np.random.SeedSequence((scene.seed, _STREAM_DETECT)))
    detections = []
    for i, (obj, d) in enumerate(zip(scene.objects, layers)):
        visible = (d > 0) & (d == joint)
        if not visible.any():
            log.warning("object obj%d (%s) is fully occluded; no detection", i, obj.mesh)
            continue
        rows, cols = np.nonzero(visible)
        edges = np.array([cols.min(), rows.min(), cols.max(), rows.max()], dtype=np.int64)
        edges += rng.integers(-jitter, jitter + 1, size=4)
        x0 = int(np.clip(edges[0], 0, k.width - 1))
        y0 = int(np.clip(edges[1], 0, k.height - 1))
        x1 = int(np.clip(edges[2], x0, k.width - 1))
        y1 = int(np.clip(edges[3], y0, k.height - 1))
        conf = float(rng.uniform(conf_range[0], conf_range[1]))
        detections.append(Detection(f"obj{i}", BoundingBox(x0, y0, x1, y1), conf))
    return detections


def depth_buffer_to_image(buf: DepthBuffer, k: CameraIntrinsics) -> DepthImage:
    """Embed a boxed render into a full-size image (debug dumps)."""
    full = np.zeros((k.height, k.width))
    b = buf.box
    full[b.y_min:b.y_max + 1, b.x_min:b.x_max + 1] = buf.depths
    return DepthImage(full, k)


def quantized_payload(img: DepthImage) -> np.ndarray:
    """The image as saturating 16-bit millimeter codes (the stored form)."""
    mm = np.floor(img.depths * 1000.0 + 0.5)
    return np.minimum(mm, MM_MAX).astype(np.uint16)


def save_depth(img: DepthImage, path) -> None:
    """Write a 16-bit big-endian PGM plus a `<name>.json` intrinsics sidecar."""
    path = Path(path)
    payload = quantized_payload(img)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (img.width, img.height, MM_MAX))
        f.write(payload.astype(">u2").tobytes())
    k = img.intrinsics
    sidecar = {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
               "width": k.width, "height": k.height, "depth_scale_mm": 1}
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def _read_pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-separated header tokens and the payload offset."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DepthLoadError("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1  # payload starts after one whitespace byte


def load_depth(path) -> DepthImage:
    """Read a PGM + sidecar pair written by :func:`save_depth`."""
    path = Path(path)
    data = path.read_bytes()
    tokens, offset = _read_pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise DepthLoadError(f"not a binary PGM: magic {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DepthLoadError("non-numeric PGM header field") from None
    if maxval != MM_MAX:
        raise DepthLoadError(f"expected 16-bit maxval {MM_MAX}, got {maxval}")
    payload = data[offset:]
    expected = width * height * 2
    if len(payload) != expected:
        raise DepthLoadError(f"payload holds {len(payload)} bytes, expected {expected}")
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise DepthLoadError(f"missing intrinsics sidecar {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    if int(meta["width"]) != width or int(meta["height"]) != height:
        raise DepthLoadError("sidecar dimensions disagree with PGM header")
    if int(meta.get("depth_scale_mm", 1)) != 1:
        raise DepthLoadError("unsupported depth scale")
    k = CameraIntrinsics(fx=float(meta["fx"]), fy=float(meta["fy"]),
                         cx=float(meta["cx"]), cy=float(meta["cy"]),
                         width=width, height=height)
    mm = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return DepthImage(mm.astype(np.float64) / 1000.0, k)


def camera_to_json(k: CameraIntrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height}


def camera_from_json(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(fx=float(d["fx"]), fy=float(d["fy"]),
                            cx=float(d["cx"]), cy=float(d["cy"]),
                            width=int(d["width"]), height=int(d["height"]))


def scene_to_json(scene: Scene) -> dict:
    objects = []
    for obj in scene.objects:
        entry = {"mesh": obj.mesh, "pose": list(obj.pose.as_array())}
        if obj.symmetric is not None:
            entry["symmetric"] = obj.symmetric
        objects.append(entry)
    return {"camera": camera_to_json(scene.camera), "objects": objects,
            "noise": {"sigma_m": scene.sigma_m, "dropout": scene.dropout},
            "seed": scene.seed}


def scene_from_json(d: dict) -> Scene:
    noise = d.get("noise", {})
    objects = tuple(
        SceneObject(mesh=o["mesh"], pose=Pose6DoF.from_array(o["pose"]),
                    symmetric=o.get("symmetric"))
        for o in d["objects"])
    return Scene(camera=camera_from_json(d["camera"]), objects=objects,
                 sigma_m=float(noise.get("sigma_m", 0.0)),
                 dropout=float(noise.get("dropout", 0.0)),
                 seed=int(d.get("seed", 0)))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_json(scene), sort_keys=True, indent=2) + "\n")


def load_scene(path) -> Scene:
    return scene_from_json(json.loads(Path(path).read_text()))


def detections_to_json(dets: list[Detection]) -> list[dict]:
    return [{"label": d.label,
             "box": [d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max],
             "confidence": d.confidence} for d in dets]


def detections_from_json(items: list[dict]) -> list[Detection]:
    return [Detection(label=d["label"],
                      box=BoundingBox(*(int(v) for v in d["box"])),
                      confidence=float(d["confidence"])) for d in items]


def save_detections(dets: list[Detection], path) -> None:
    Path(path).write_text(json.dumps(detections_to_json(dets), sort_keys=True, indent=2) + "\n")


def load_detections(path) -> list[Detection]:
    return detections_from_json(json.loads(Path(path).read_text()))
