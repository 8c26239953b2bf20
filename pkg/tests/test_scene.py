"""Scene composition, observation corruption, detections, file round trips."""

import json
import logging

import numpy as np
import pytest

from mcpose.geometry import CameraIntrinsics, Pose6DoF, pose_to_transform
from mcpose.raster import BoundingBox, render_full
from mcpose.scene import (
    DEFAULT_CAMERA,
    Detection,
    DepthImage,
    DepthLoadError,
    Scene,
    SceneObject,
    load_depth,
    load_detections,
    load_scene,
    render_scene,
    resolve_meshes,
    save_depth,
    save_detections,
    save_scene,
    stub_detect,
)

K = CameraIntrinsics(fx=200.0, fy=200.0, cx=80.0, cy=60.0, width=160, height=120)


def _scene(objects=None, **kw):
    if objects is None:
        objects = (SceneObject("builtin:box", Pose6DoF(0.0, 0.0, 0.7, 0.2, 0.3, 0.1)),)
    return Scene(camera=K, objects=tuple(objects), **kw)


class TestDepthImage:
    def test_shape_must_match_intrinsics(self):
        with pytest.raises(ValueError):
            DepthImage(np.zeros((60, 80)), K)

    def test_rejects_negative_depths(self):
        bad = np.zeros((K.height, K.width))
        bad[3, 4] = -0.1
        with pytest.raises(ValueError):
            DepthImage(bad, K)

    def test_region_view_shares_data(self):
        img = DepthImage(np.arange(K.height * K.width, dtype=float).reshape(
            K.height, K.width), K)
        reg = img.region(BoundingBox(2, 3, 5, 7))
        assert reg.values.shape == (5, 4)
        assert reg.values[0, 0] == img.depths[3, 2]
        assert np.shares_memory(reg.values, img.depths)

    def test_region_must_fit(self):
        img = DepthImage(np.zeros((K.height, K.width)), K)
        with pytest.raises(ValueError):
            img.region(BoundingBox(0, 0, K.width, 5))


class TestRenderScene:
    def test_single_object_matches_direct_render(self):
        scene = _scene()
        meshes = resolve_meshes(scene)
        img = render_scene(scene, meshes)
        buf, _ = render_full(meshes["builtin:box"],
                             pose_to_transform(scene.objects[0].pose), K)
        np.testing.assert_array_equal(img.depths, buf.depths)

    def test_composition_is_pixelwise_nearest(self):
        # two boxes on the same sight line: the joint image must equal the
        # per-pixel minimum of the individual renders over valid pixels
        near = SceneObject("builtin:box", Pose6DoF(0.0, 0.0, 0.6, 0.0, 0.0, 0.0))
        far = SceneObject("builtin:box", Pose6DoF(0.06, 0.0, 0.9, 0.3, 0.2, 0.1))
        scene = _scene(objects=(near, far))
        meshes = resolve_meshes(scene)
        img = render_scene(scene, meshes)
        a, _ = render_full(meshes["builtin:box"], pose_to_transform(near.pose), K)
        b, _ = render_full(meshes["builtin:box"], pose_to_transform(far.pose), K)
        da, db = a.depths, b.depths
        both = (da > 0) & (db > 0)
        only_a = (da > 0) & ~both
        only_b = (db > 0) & ~both
        assert both.any() and only_b.any()
        np.testing.assert_array_equal(img.depths[both], np.minimum(da, db)[both])
        np.testing.assert_array_equal(img.depths[only_a], da[only_a])
        np.testing.assert_array_equal(img.depths[only_b], db[only_b])
        assert (img.depths[(da == 0) & (db == 0)] == 0).all()

    def test_noise_perturbs_only_valid_pixels(self):
        clean = render_scene(_scene(), resolve_meshes(_scene()))
        noisy = render_scene(_scene(sigma_m=0.005, seed=9),
                             resolve_meshes(_scene()))
        valid = clean.depths > 0
        assert (noisy.depths[~valid] == 0).all()
        assert (noisy.depths[valid] > 0).all()
        diffs = noisy.depths[valid] - clean.depths[valid]
        assert diffs.std() == pytest.approx(0.005, rel=0.2)

    def test_dropout_invalidates_exact_count(self):
        scene = _scene(dropout=0.25, seed=5)
        meshes = resolve_meshes(scene)
        clean = render_scene(_scene(), meshes)
        dropped = render_scene(scene, meshes)
        n_valid = clean.n_valid
        expected_gone = int(0.25 * n_valid)
        assert dropped.n_valid == n_valid - expected_gone
        # dropout only removes pixels, never adds or moves them
        assert ((dropped.depths > 0) <= (clean.depths > 0)).all()

    def test_deterministic_per_seed(self):
        scene = _scene(sigma_m=0.003, dropout=0.1, seed=42)
        meshes = resolve_meshes(scene)
        a = render_scene(scene, meshes)
        b = render_scene(scene, meshes)
        np.testing.assert_array_equal(a.depths, b.depths)
        other = render_scene(_scene(sigma_m=0.003, dropout=0.1, seed=43), meshes)
        assert (a.depths != other.depths).any()

    def test_scene_validation(self):
        with pytest.raises(ValueError):
            Scene(camera=K, objects=())
        with pytest.raises(ValueError):
            _scene(dropout=1.0)
        with pytest.raises(ValueError):
            _scene(sigma_m=-0.1)


class TestStubDetect:
    def test_box_is_tight_without_jitter(self):
        scene = _scene()
        meshes = resolve_meshes(scene)
        dets = stub_detect(scene, meshes, jitter=0)
        assert len(dets) == 1
        d = dets[0]
        assert d.label == "obj0"
        img = render_scene(scene, meshes)
        rows, cols = np.nonzero(img.depths > 0)
        assert (d.box.x_min, d.box.y_min) == (cols.min(), rows.min())
        assert (d.box.x_max, d.box.y_max) == (cols.max(), rows.max())
        assert 0.7 <= d.confidence <= 0.95

    def test_jitter_stays_within_bound_and_image(self):
        scene = _scene()
        meshes = resolve_meshes(scene)
        tight = stub_detect(scene, meshes, jitter=0)[0].box
        for seed in range(12):
            s = _scene(seed=seed)
            d = stub_detect(s, meshes, jitter=3)[0]
            for got, ref in [(d.box.x_min, tight.x_min), (d.box.y_min, tight.y_min),
                             (d.box.x_max, tight.x_max), (d.box.y_max, tight.y_max)]:
                assert abs(got - ref) <= 3
            assert d.box.fits(K)

    def test_occluded_object_omitted_with_warning(self, caplog):
        # a big near box hides a small far sphere on the same sight line
        front = SceneObject("builtin:box", Pose6DoF(0.0, 0.0, 0.5, 0.0, 0.0, 0.0))
        hidden = SceneObject("builtin:sphere", Pose6DoF(0.0, 0.0, 2.5, 0.0, 0.0, 0.0))
        scene = _scene(objects=(front, hidden))
        meshes = resolve_meshes(scene)
        with caplog.at_level(logging.WARNING, logger="mcpose.scene"):
            dets = stub_detect(scene, meshes)
        assert [d.label for d in dets] == ["obj0"]
        assert any("occluded" in r.message for r in caplog.records)

    def test_partially_occluded_box_covers_visible_pixels_only(self):
        front = SceneObject("builtin:box", Pose6DoF(-0.03, 0.0, 0.5, 0.0, 0.0, 0.0))
        behind = SceneObject("builtin:box", Pose6DoF(0.05, 0.0, 0.8, 0.1, 0.2, 0.3))
        scene = _scene(objects=(front, behind))
        meshes = resolve_meshes(scene)
        dets = stub_detect(scene, meshes, jitter=0)
        assert len(dets) == 2
        full_b, _ = render_full(meshes["builtin:box"],
                                pose_to_transform(behind.pose), K)
        rows, cols = np.nonzero(full_b.depths > 0)
        unoccluded = BoundingBox(cols.min(), rows.min(), cols.max(), rows.max())
        vis = dets[1].box
        assert vis.area <= unoccluded.area
        assert vis.x_min >= unoccluded.x_min and vis.x_max <= unoccluded.x_max

    def test_deterministic(self):
        scene = _scene(seed=17)
        meshes = resolve_meshes(scene)
        a = stub_detect(scene, meshes, jitter=2)
        b = stub_detect(scene, meshes, jitter=2)
        assert a == b


class TestDepthFiles:
    def test_round_trip_quantizes_to_millimeters(self, tmp_path):
        scene = _scene(sigma_m=0.002, seed=3)
        img = render_scene(scene, resolve_meshes(scene))
        p = tmp_path / "obs.pgm"
        save_depth(img, p)
        back = load_depth(p)
        assert back.intrinsics == img.intrinsics
        assert np.abs(back.depths - img.depths).max() <= 0.0005 + 1e-12
        np.testing.assert_array_equal(back.depths > 0, img.depths > 0)

    def test_golden_bytes_tiny_image(self, tmp_path):
        k = CameraIntrinsics(fx=10.0, fy=10.0, cx=1.0, cy=0.5, width=2, height=1)
        img = DepthImage(np.array([[0.5, 1.25]]), k)
        p = tmp_path / "tiny.pgm"
        save_depth(img, p)
        # 500 mm and 1250 mm big-endian after the ASCII header
        assert p.read_bytes() == b"P5\n2 1\n65535\n" + bytes([1, 244, 4, 226])
        meta = json.loads((tmp_path / "tiny.json").read_text())
        assert meta == {"fx": 10.0, "fy": 10.0, "cx": 1.0, "cy": 0.5,
                        "width": 2, "height": 1, "depth_scale_mm": 1}

    def test_save_twice_is_byte_identical(self, tmp_path):
        scene = _scene()
        img = render_scene(scene, resolve_meshes(scene))
        save_depth(img, tmp_path / "a.pgm")
        save_depth(img, tmp_path / "b.pgm")
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_load_rejects_bad_magic(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P2\n2 1\n65535\n\x00\x01\x00\x02")
        with pytest.raises(DepthLoadError, match="magic"):
            load_depth(p)

    def test_load_rejects_truncated_payload(self, tmp_path):
        p = tmp_path / "short.pgm"
        p.write_bytes(b"P5\n4 4\n65535\n\x00\x01")
        with pytest.raises(DepthLoadError, match="bytes"):
            load_depth(p)

    def test_load_requires_sidecar(self, tmp_path):
        p = tmp_path / "lonely.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n\x00\x05")
        with pytest.raises(DepthLoadError, match="sidecar"):
            load_depth(p)

    def test_load_rejects_dimension_mismatch(self, tmp_path):
        p = tmp_path / "dim.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n\x00\x05")
        (tmp_path / "dim.json").write_text(json.dumps(
            {"fx": 1.0, "fy": 1.0, "cx": 0.5, "cy": 0.5,
             "width": 7, "height": 1, "depth_scale_mm": 1}))
        with pytest.raises(DepthLoadError, match="disagree"):
            load_depth(p)

    def test_load_rejects_eight_bit_maxval(self, tmp_path):
        p = tmp_path / "eight.pgm"
        p.write_bytes(b"P5\n1 1\n255\n\x05")
        with pytest.raises(DepthLoadError, match="maxval"):
            load_depth(p)


class TestSceneFiles:
    def test_scene_round_trip(self, tmp_path):
        scene = _scene(sigma_m=0.004, dropout=0.05, seed=12)
        p = tmp_path / "scene.json"
        save_scene(scene, p)
        assert load_scene(p) == scene

    def test_symmetry_override_round_trips(self, tmp_path):
        obj = SceneObject("builtin:lshape", Pose6DoF(0, 0, 0.8, 0, 0, 0),
                          symmetric=True)
        scene = _scene(objects=(obj,))
        p = tmp_path / "scene.json"
        save_scene(scene, p)
        back = load_scene(p)
        assert back.objects[0].symmetric is True
        assert back.objects[0].is_symmetric()

    def test_symmetry_defaults(self):
        assert SceneObject("builtin:box", Pose6DoF(0, 0, 1, 0, 0, 0)).is_symmetric()
        assert not SceneObject("builtin:lshape",
                               Pose6DoF(0, 0, 1, 0, 0, 0)).is_symmetric()
        assert not SceneObject("some/file.obj",
                               Pose6DoF(0, 0, 1, 0, 0, 0)).is_symmetric()

    def test_detections_round_trip(self, tmp_path):
        dets = [Detection("obj0", BoundingBox(1, 2, 30, 40), 0.8),
                Detection("obj1", BoundingBox(5, 5, 6, 6), 0.75)]
        p = tmp_path / "det.json"
        save_detections(dets, p)
        assert load_detections(p) == dets

    def test_detection_confidence_validated(self):
        with pytest.raises(ValueError):
            Detection("x", BoundingBox(0, 0, 1, 1), 1.2)

    def test_resolve_meshes_loads_files(self, tmp_path):
        from mcpose.primitives import make_box
        from mcpose.geometry import save_mesh_file
        save_mesh_file(make_box(), tmp_path / "b.obj")
        obj = SceneObject("b.obj", Pose6DoF(0, 0, 1, 0, 0, 0))
        scene = _scene(objects=(obj,))
        meshes = resolve_meshes(scene, base_dir=tmp_path)
        assert meshes["b.obj"].vertices.shape == (8, 3)

    def test_default_camera_is_vga(self):
        assert (DEFAULT_CAMERA.width, DEFAULT_CAMERA.height) == (640, 480)
