"""Metric correctness against closed forms and brute-force oracles."""

import csv
import json
import math

import numpy as np
import pytest

from mcpose.geometry import Pose6DoF, TriangleMesh, euler_rotation
from mcpose.metrics import (
    EvalRecord,
    EvalReport,
    add_metric,
    adds_metric,
    read_csv,
    success_rate,
)
from mcpose.primitives import make_can, make_mesh

IDENT = Pose6DoF(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _random_pose(rng, t_scale=0.5):
    t = rng.uniform(-t_scale, t_scale, 3)
    r = rng.uniform(-math.pi, math.pi, 3)
    return Pose6DoF(*t, *r)


def _ring_mesh(radius=1.0, n=64):
    """All vertices on a circle of the given radius in the z=0 plane."""
    ang = 2.0 * math.pi * np.arange(n) / n
    verts = np.column_stack([radius * np.cos(ang), radius * np.sin(ang),
                             np.zeros(n)])
    faces = np.array([(0, i, i + 1) for i in range(1, n - 1)])
    return TriangleMesh(verts, faces)


def _euler_from_matrix(r):
    """Inverse of the Rz(yaw) Ry(pitch) Rx(roll) composition."""
    pitch = -math.asin(max(-1.0, min(1.0, r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return roll, pitch, yaw


def _compose(outer: Pose6DoF, inner: Pose6DoF) -> Pose6DoF:
    ro = euler_rotation(outer.roll, outer.pitch, outer.yaw)
    ri = euler_rotation(inner.roll, inner.pitch, inner.yaw)
    r = ro @ ri
    t = ro @ np.array([inner.x, inner.y, inner.z]) + np.array(
        [outer.x, outer.y, outer.z])
    roll, pitch, yaw = _euler_from_matrix(r)
    return Pose6DoF(t[0], t[1], t[2], roll, pitch, yaw)


def _nn_oracle(mesh, pose_est, pose_gt):
    re = euler_rotation(pose_est.roll, pose_est.pitch, pose_est.yaw)
    rg = euler_rotation(pose_gt.roll, pose_gt.pitch, pose_gt.yaw)
    a = mesh.vertices @ re.T + np.array([pose_est.x, pose_est.y, pose_est.z])
    b = mesh.vertices @ rg.T + np.array([pose_gt.x, pose_gt.y, pose_gt.z])
    total = 0.0
    for p in a:
        best = min(np.linalg.norm(p - q) for q in b)
        total += best
    return total / len(a)


class TestAdd:
    def test_identical_poses_zero(self):
        mesh = make_mesh("box")
        p = Pose6DoF(0.1, 0.2, 0.9, 0.3, -0.2, 1.0)
        assert add_metric(mesh, p, p) == 0.0

    def test_pure_translation_is_displacement_norm(self):
        mesh = make_mesh("lshape")
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.uniform(-0.3, 0.3, 3)
            r = rng.uniform(-math.pi, math.pi, 3)
            a = Pose6DoF(0.0, 0.0, 0.0, *r)
            b = Pose6DoF(t[0], t[1], t[2], *r)
            expect = float(np.linalg.norm(t))
            assert abs(add_metric(mesh, a, b) - expect) < 1e-12
            assert abs(add_metric(mesh, b, a) - expect) < 1e-12

    def test_small_rotation_of_ring_scales_with_radius(self):
        mesh = _ring_mesh(radius=1.0)
        theta = 1e-3
        rot = Pose6DoF(0, 0, 0, 0, 0, theta)
        got = add_metric(mesh, rot, IDENT)
        # chord length 2 r sin(theta/2) for every ring vertex
        assert abs(got - theta * 1.0) < theta * 1e-4
        exact = 2.0 * math.sin(theta / 2.0)
        assert abs(got - exact) < 1e-15

    def test_matches_per_vertex_oracle(self):
        mesh = make_mesh("lshape")
        rng = np.random.default_rng(1)
        for _ in range(10):
            pa, pb = _random_pose(rng), _random_pose(rng)
            ra = euler_rotation(pa.roll, pa.pitch, pa.yaw)
            rb = euler_rotation(pb.roll, pb.pitch, pb.yaw)
            va = mesh.vertices @ ra.T + np.array([pa.x, pa.y, pa.z])
            vb = mesh.vertices @ rb.T + np.array([pb.x, pb.y, pb.z])
            oracle = float(np.mean([np.linalg.norm(x - y)
                                    for x, y in zip(va, vb)]))
            assert abs(add_metric(mesh, pa, pb) - oracle) < 1e-12


class TestAddS:
    def test_identical_poses_zero(self):
        mesh = make_mesh("can")
        p = Pose6DoF(0.0, 0.1, 0.7, 0.2, 0.3, 0.4)
        assert adds_metric(mesh, p, p) == 0.0

    def test_axial_spin_of_can_forgiven(self):
        # the can's 16-fold vertex ring maps onto itself under spins of
        # k*(2*pi/16), so ADD-S vanishes while ADD sees the rotation
        mesh = make_can()
        base = Pose6DoF(0.05, -0.02, 0.8, 0.0, 0.0, 0.3)
        for k in (1, 3, 7):
            spun = Pose6DoF(base.x, base.y, base.z, base.roll, base.pitch,
                            base.yaw + k * 2.0 * math.pi / 16)
            assert adds_metric(mesh, spun, base) < 1e-12
            assert add_metric(mesh, spun, base) > 1e-3

    def test_matches_quadratic_oracle(self):
        mesh = make_mesh("can")
        rng = np.random.default_rng(2)
        for _ in range(5):
            pa, pb = _random_pose(rng), _random_pose(rng)
            got = adds_metric(mesh, pa, pb)
            assert abs(got - _nn_oracle(mesh, pa, pb)) < 1e-9

    def test_never_exceeds_add(self):
        rng = np.random.default_rng(3)
        for name in ("box", "can", "lshape", "sphere", "cylinder"):
            mesh = make_mesh(name)
            for _ in range(6):
                pa, pb = _random_pose(rng), _random_pose(rng)
                assert adds_metric(mesh, pa, pb) <= \
                    add_metric(mesh, pa, pb) + 1e-15

    def test_chunking_boundary_exact(self):
        # a ring bigger than one NN chunk exercises the slab loop
        mesh = _ring_mesh(radius=0.3, n=1100)
        rng = np.random.default_rng(4)
        pa, pb = _random_pose(rng, 0.1), _random_pose(rng, 0.1)
        a = mesh.vertices @ euler_rotation(pa.roll, pa.pitch, pa.yaw).T \
            + np.array([pa.x, pa.y, pa.z])
        b = mesh.vertices @ euler_rotation(pb.roll, pb.pitch, pb.yaw).T \
            + np.array([pb.x, pb.y, pb.z])
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        oracle = float(np.sqrt(d2.min(axis=1)).mean())
        assert abs(adds_metric(mesh, pa, pb) - oracle) < 1e-12


class TestLeftCompositionInvariance:
    @pytest.mark.parametrize("metric", [add_metric, adds_metric])
    def test_common_rigid_motion_cancels(self, metric):
        mesh = make_mesh("lshape")
        rng = np.random.default_rng(5)
        for _ in range(5):
            pa, pb = _random_pose(rng), _random_pose(rng)
            outer = _random_pose(rng)
            before = metric(mesh, pa, pb)
            after = metric(mesh, _compose(outer, pa), _compose(outer, pb))
            assert abs(before - after) < 1e-9


def _rec(mesh="box", add_m=0.01, adds_m=0.005, symmetric=True, scene=0,
         seed=0, **kw):
    defaults = dict(label="obj0", mesh=mesh, scene=scene, seed=seed,
                    add_m=add_m, adds_m=adds_m, symmetric=symmetric,
                    iterations=50, converged=False, wall_time_s=1.5)
    defaults.update(kw)
    return EvalRecord(**defaults)


class TestSuccessRate:
    def test_all_below_threshold(self):
        recs = [_rec(add_m=0.0, adds_m=0.0) for _ in range(4)]
        assert success_rate(recs, 0.04) == 1.0

    def test_none_below_threshold(self):
        recs = [_rec(add_m=0.5, adds_m=0.5) for _ in range(4)]
        assert success_rate(recs, 0.04) == 0.0

    def test_hand_count_mixed_symmetry(self):
        recs = [
            _rec(symmetric=True, add_m=0.10, adds_m=0.01),   # pass via ADD-S
            _rec(symmetric=False, add_m=0.10, adds_m=0.01),  # fail via ADD
            _rec(symmetric=False, add_m=0.02, adds_m=0.01),  # pass via ADD
            _rec(symmetric=True, add_m=0.39, adds_m=0.39),   # fail
        ]
        assert success_rate(recs, 0.04) == 0.5
        assert success_rate(recs, 0.04, symmetric=True) == 0.75
        assert success_rate(recs, 0.04, symmetric=False) == 0.25

    def test_threshold_is_strict(self):
        recs = [_rec(symmetric=False, add_m=0.04)]
        assert success_rate(recs, 0.04) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            success_rate([], 0.04)


class TestEvalReport:
    def _report(self):
        recs = tuple(
            _rec(mesh=m, scene=sc, seed=sd,
                 add_m=0.01 * (sd + 1), adds_m=0.008 * (sd + 1),
                 symmetric=(m != "lshape"), iterations=10 + sd,
                 converged=sd % 2 == 0, depth_reads_naive=1000,
                 depth_reads_shared=800)
            for m in ("box", "lshape") for sc in range(2) for sd in range(3))
        return EvalReport(records=recs, threshold_m=0.04)

    def test_rate_bounds_and_summary(self):
        rep = self._report()
        assert 0.0 <= rep.success_rate <= 1.0
        s = rep.summary_dict()
        assert s["n_runs"] == 12
        assert set(s["per_mesh"]) == {"box", "lshape"}
        assert s["median_iterations"] == 11.0
        for rate in s["per_mesh"].values():
            assert 0.0 <= rate <= 1.0

    def test_per_mesh_matches_filtered_recount(self):
        rep = self._report()
        for mesh, rate in rep.per_mesh_rates().items():
            subset = [r for r in rep.records if r.mesh == mesh]
            assert rate == success_rate(subset, rep.threshold_m)

    def test_csv_roundtrip(self, tmp_path):
        rep = self._report()
        path = tmp_path / "runs.csv"
        rep.write_csv(path)
        back = read_csv(path)
        assert back == rep.records
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + len(rep.records)

    def test_summary_json_file(self, tmp_path):
        rep = self._report()
        path = tmp_path / "summary.json"
        rep.write_summary(path)
        with open(path) as fh:
            loaded = json.load(fh)
        assert loaded == json.loads(json.dumps(rep.summary_dict()))

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            EvalReport(records=())

    def test_negative_error_rejected(self):
        with pytest.raises(ValueError):
            _rec(add_m=-0.01)
