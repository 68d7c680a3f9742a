import math

import numpy as np
import pytest

from conftest import random_pair
from mranchor.errors import EmptyROI, FormatError, NoCorrespondences, TooSparse
from mranchor.geometry import RigidTransform, pose_error
from mranchor.registration.cloud import (
    PointCloud,
    RegionOfInterest,
    crop_roi,
    estimate_normals,
    voxel_downsample,
)
from mranchor.registration.features import compute_fpfh
from mranchor.registration.fgr import FgrParams, coarse_register, match_features
from mranchor.registration.icp import IcpParams, refine_icp
from mranchor.registration.pipeline import (
    HeadLocatorParams,
    locate_head,
    prepare_scene,
    prepare_template,
)
from mranchor.registration.ply import read_ply, write_ply
from mranchor.registration.results import evaluate_alignment
from mranchor.sim.config import preset
from mranchor.sim.head import default_roi, gen_head_scene, head_template
from mranchor.sim.scenarios import gen_head_scenario


@pytest.fixture(scope="module")
def template():
    return head_template()


@pytest.fixture(scope="module")
def prepared(template):
    return prepare_template(template, HeadLocatorParams())


def noisy(cloud, rng, sigma=0.001, k=30):
    return estimate_normals(PointCloud(cloud.points + rng.normal(scale=sigma, size=cloud.points.shape)), k)


def within(t, truth, mm, deg):
    e = pose_error(t, truth)
    return e.translation_mm < mm and e.rotation_deg < deg


class TestPointCloud:
    def test_normals_must_align(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 3)), np.tile([0, 0, 1.0], (2, 1)))

    def test_normals_must_be_unit(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((2, 3)), np.tile([0, 0, 2.0], (2, 1)))

    def test_transformed_rotates_normals(self, rng):
        tr, _ = random_pair(rng)
        c = PointCloud(rng.normal(size=(5, 3)), np.tile([0, 0, 1.0], (5, 1)))
        moved = c.transformed(tr)
        assert np.allclose(moved.normals, tr.rotate(c.normals))
        assert np.allclose(moved.points, tr.apply(c.points))

    def test_roi_validation(self):
        with pytest.raises(ValueError):
            RegionOfInterest(RigidTransform(), (0.1, 0.0, 0.1))


class TestCrop:
    def test_all_inside(self, rng):
        c = PointCloud(rng.uniform(-0.5, 0.5, (50, 3)), None)
        out = crop_roi(c, RegionOfInterest(RigidTransform(), (1, 1, 1)))
        assert np.array_equal(out.points, c.points)

    def test_containment(self):
        c = PointCloud([[0, 0, 0], [2, 0, 0]], [[0, 0, 1], [0, 1, 0]])
        out = crop_roi(c, RegionOfInterest(RigidTransform(), (1, 1, 1)))
        assert np.array_equal(out.points, [[0, 0, 0]])
        assert np.array_equal(out.normals, [[0, 0, 1]])

    def test_rotated_box_brute_force(self, rng):
        center, m = random_pair(rng, scale=0.2)
        roi = RegionOfInterest(center, (0.3, 0.1, 0.2))
        pts = rng.uniform(-0.6, 0.6, (2000, 3))
        out = crop_roi(PointCloud(pts), roi)
        inv = np.linalg.inv(m)
        keep = [p for p in pts if np.all(np.abs((inv @ np.append(p, 1))[:3]) <= (0.3, 0.1, 0.2))]
        assert np.array_equal(out.points, np.array(keep))
        assert 0 < len(keep) < len(pts)

    def test_empty(self):
        out = crop_roi(PointCloud(np.zeros((0, 3))), RegionOfInterest(RigidTransform(), (1, 1, 1)))
        assert len(out) == 0


class TestVoxel:
    def test_single_point(self):
        assert np.array_equal(voxel_downsample(PointCloud([[0.1, 0.2, 0.3]]), 0.05).points, [[0.1, 0.2, 0.3]])

    def test_two_points_one_voxel(self):
        out = voxel_downsample(PointCloud([[0.01, 0.01, 0.01], [0.03, 0.02, 0.04]]), 0.05)
        assert np.allclose(out.points, [[0.02, 0.015, 0.025]])

    def test_representatives_near_inputs(self, rng):
        pts = rng.uniform(-0.1, 0.1, (5000, 3))
        out = voxel_downsample(PointCloud(pts), 0.01)
        assert len(out) <= len(pts)
        d = np.min(np.linalg.norm(out.points[:, None, :] - pts[None, :, :], axis=2), axis=1)
        assert np.all(d <= 0.01 * math.sqrt(3) / 2)

    def test_order_independent(self, rng):
        pts = rng.uniform(-0.1, 0.1, (500, 3))
        a = voxel_downsample(PointCloud(pts), 0.02)
        b = voxel_downsample(PointCloud(pts[rng.permutation(500)]), 0.02)
        assert np.allclose(a.points, b.points, atol=1e-15)

    def test_normals_averaged(self):
        n = np.array([[0, 0, 1.0], [0, 1.0, 0]])
        out = voxel_downsample(PointCloud([[0, 0, 0], [0.001, 0, 0]], n), 0.05)
        assert np.allclose(out.normals, [[0, math.sqrt(0.5), math.sqrt(0.5)]])

    def test_bad_voxel(self):
        with pytest.raises(ValueError):
            voxel_downsample(PointCloud([[0, 0, 0]]), 0.0)


class TestNormals:
    def test_plane(self, rng):
        pts = np.c_[rng.uniform(-1, 1, (300, 2)), np.zeros(300)]
        out = estimate_normals(PointCloud(pts), 10, viewpoint=(0, 0, 5))
        assert np.allclose(out.normals, [0, 0, 1], atol=1e-3)
        flipped = estimate_normals(PointCloud(pts), 10, viewpoint=(0, 0, -5))
        assert np.allclose(flipped.normals, -out.normals)

    def test_sphere(self, rng):
        d = rng.normal(size=(3000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        out = estimate_normals(PointCloud(d), 30, viewpoint=(0, 0, 0))
        cos = np.einsum("ij,ij->i", out.normals, -d)
        assert np.mean(cos >= math.cos(math.radians(5))) >= 0.95

    def test_too_sparse(self):
        with pytest.raises(TooSparse):
            estimate_normals(PointCloud(np.zeros((5, 3))), 10)
        with pytest.raises(ValueError):
            estimate_normals(PointCloud(np.zeros((5, 3))), 2)


class TestFeatures:
    def test_rotation_invariant(self, prepared, rng):
        tr, _ = random_pair(rng)
        f1 = compute_fpfh(prepared.coarse, 0.04, 300)
        f2 = compute_fpfh(prepared.coarse.transformed(tr), 0.04, 300)
        assert f1.shape == (len(prepared.coarse), 33)
        assert np.max(np.abs(f1 - f2)) < 1e-9

    def test_needs_normals(self):
        with pytest.raises(ValueError):
            compute_fpfh(PointCloud(np.zeros((5, 3))), 0.1)

    def test_reciprocal_matches(self):
        f = np.eye(20)
        pairs = match_features(f, f[::-1])
        assert np.array_equal(pairs, np.c_[np.arange(20), np.arange(20)[::-1]])


class TestCoarse:
    def test_self_alignment(self, prepared):
        res = coarse_register(prepared.coarse, prepared.coarse, FgrParams(), prepared.features, prepared.features)
        assert within(res.transform, RigidTransform(), 5, 5)

    def test_full_overlap_known_transform(self, template, prepared):
        rng = np.random.default_rng(11)
        tr = RigidTransform.from_rotvec((0.5, -1.2, 2.0), (0.05, -0.02, 0.4))
        target = prepare_scene(noisy(template.transformed(tr), rng), 0.005, 60, (0, 0, 0))
        res = coarse_register(prepared.coarse, target, FgrParams(), prepared.features)
        assert within(res.transform, tr, 10, 10)

    def test_partial_view_monte_carlo(self, template, prepared):
        hits = 0
        for seed in range(50):
            scene, roi, truth = gen_head_scenario(preset("head").with_overrides(seed=seed), template)
            target = prepare_scene(crop_roi(scene, roi), 0.005, 60, (0, 0, 0))
            res = coarse_register(prepared.coarse, target, FgrParams(seed=seed), prepared.features)
            hits += within(res.transform, truth, 15, 15)
        assert hits >= 45

    def test_empty(self, prepared):
        empty = PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(NoCorrespondences):
            coarse_register(prepared.coarse, empty)


class TestIcp:
    def test_fixed_point(self, prepared):
        res = refine_icp(prepared.fine, prepared.fine, RigidTransform())
        assert res.inlier_rmse < 1e-9 and res.fitness == 1.0
        assert res.transform.is_close(RigidTransform(), 1e-9)

    def test_perturbed_init(self, template, prepared):
        rng = np.random.default_rng(5)
        truth = RigidTransform.from_rotvec((0.3, 0.2, -0.4), (0.0, 0.02, 0.5))
        target = noisy(voxel_downsample(template.transformed(truth), 0.002), rng)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        shift = rng.normal(size=3)
        delta = RigidTransform.from_rotvec(axis * math.radians(10), 0.01 * shift / np.linalg.norm(shift))
        init = RigidTransform(truth.q, truth.t) @ delta
        res = refine_icp(prepared.fine, target, init, IcpParams(max_distance=0.02))
        assert within(res.transform, truth, 2, 2)

    def test_never_worse_and_monotone(self, template, prepared):
        rng = np.random.default_rng(8)
        for _ in range(5):
            truth, _ = random_pair(rng, scale=0.05)
            target = noisy(voxel_downsample(template.transformed(truth), 0.003), rng)
            init = RigidTransform.from_rotvec(rng.normal(scale=0.05, size=3), rng.normal(scale=0.004, size=3)) @ truth
            res = refine_icp(prepared.fine, target, init, IcpParams(0.006))
            _, rmse0 = evaluate_alignment(prepared.fine, target, init, 0.006)
            assert res.inlier_rmse <= rmse0
            h = np.array(res.objective_history)
            assert np.all(np.diff(h) <= 0)

    def test_no_correspondences(self, prepared):
        with pytest.raises(NoCorrespondences):
            refine_icp(prepared.fine, prepared.fine, RigidTransform(t=(5, 0, 0)))

    def test_needs_target_normals(self, prepared):
        with pytest.raises(ValueError):
            refine_icp(prepared.fine, PointCloud(prepared.fine.points), RigidTransform())


class TestLocateHead:
    def test_known_pose_no_clutter(self, template, prepared):
        scene, roi, truth = gen_head_scenario(preset("head").with_overrides(seed=3), template)
        res = locate_head(prepared, scene, roi, HeadLocatorParams(seed=3))
        assert res.converged and within(res.transform, truth, 2, 2)
        assert res.coarse is not None

    def test_background_outside_roi(self, template, prepared):
        scene, roi, truth = gen_head_scenario(preset("head-clutter").with_overrides(seed=3), template)
        assert len(scene) > len(gen_head_scenario(preset("head").with_overrides(seed=3), template)[0])
        res = locate_head(prepared, scene, roi, HeadLocatorParams(seed=3))
        assert res.converged and within(res.transform, truth, 2, 2)

    def test_empty_roi(self, template, prepared):
        scene, _, _ = gen_head_scenario(preset("head"), template)
        far = RegionOfInterest(RigidTransform(t=(5, 5, 5)), (0.1, 0.1, 0.1))
        with pytest.raises(EmptyROI):
            locate_head(prepared, scene, far)

    def test_clutter_only_fails(self, template, prepared):
        scene, roi, _ = gen_head_scenario(preset("head-clutter").with_overrides(seed=4), template, include_head=False)
        # keep some clutter inside the box so the crop is not empty
        inside = roi.center.apply(np.random.default_rng(0).uniform(-0.14, 0.14, (400, 3)))
        scene = PointCloud(np.vstack([scene.points, inside]))
        assert not locate_head(prepared, scene, roi).converged

    def test_clean_full_view(self, template, prepared):
        truth = RigidTransform.from_rotvec((0.4, 2.0, -0.3), (0.01, -0.02, 0.5))
        scene = gen_head_scene(template, truth, visibility=1.0, cloud_sigma=0.0)
        res = locate_head(prepared, scene, default_roi(RigidTransform(t=truth.t + 0.01)))
        assert res.converged and pose_error(res.transform, truth).translation_mm < 0.5

    def test_equivariance(self, template, prepared):
        scene, roi, truth = gen_head_scenario(preset("head").with_overrides(seed=6), template)
        y = RigidTransform.from_rotvec((0.0, 0.3, 0.1), (0.05, 0.0, 0.02))
        params = HeadLocatorParams(seed=6, viewpoint=tuple(y.t))
        base = locate_head(prepared, scene, roi, HeadLocatorParams(seed=6))
        moved = locate_head(prepared, scene.transformed(y), roi.transformed(y), params)
        assert within(moved.transform, y @ base.transform, 2, 2)
        assert within(moved.transform, y @ truth, 2, 2)

    def test_deterministic(self, template, prepared):
        scene, roi, _ = gen_head_scenario(preset("head").with_overrides(seed=9), template)
        a = locate_head(prepared, scene, roi, HeadLocatorParams(seed=9))
        b = locate_head(prepared, scene, roi, HeadLocatorParams(seed=9))
        assert np.array_equal(a.transform.q, b.transform.q) and np.array_equal(a.transform.t, b.transform.t)
        assert (a.fitness, a.inlier_rmse, a.iterations, a.objective_history) == \
               (b.fitness, b.inlier_rmse, b.iterations, b.objective_history)

    def test_raw_template_matches_prepared(self, template, prepared):
        scene, roi, _ = gen_head_scenario(preset("head").with_overrides(seed=2), template)
        a = locate_head(template, scene, roi, HeadLocatorParams(seed=2))
        b = locate_head(prepared, scene, roi, HeadLocatorParams(seed=2))
        assert np.array_equal(a.transform.t, b.transform.t)

    def test_prepared_grid_mismatch(self, template, prepared):
        scene, roi, _ = gen_head_scenario(preset("head"), template)
        with pytest.raises(ValueError):
            locate_head(prepared, scene, roi, HeadLocatorParams(voxel=0.004))

    def test_fitness_in_range(self, template, prepared):
        scene, roi, _ = gen_head_scenario(preset("head").with_overrides(seed=1), template)
        res = locate_head(prepared, scene, roi)
        assert 0.0 <= res.fitness <= 1.0 and res.inlier_rmse >= 0.0


class TestPly:
    @pytest.mark.parametrize("binary", [True, False])
    @pytest.mark.parametrize("with_normals", [True, False])
    def test_roundtrip(self, tmp_path, rng, binary, with_normals):
        pts = rng.normal(size=(40, 3))
        normals = None
        if with_normals:
            normals = rng.normal(size=(40, 3))
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        path = tmp_path / "c.ply"
        write_ply(path, PointCloud(pts, normals), binary=binary)
        back = read_ply(path)
        assert np.allclose(back.points, pts, atol=1e-6)
        assert back.has_normals == with_normals
        if with_normals:
            assert np.allclose(back.normals, normals, atol=1e-6)

    def test_extra_properties_ignored(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                        "property float z\nproperty uchar red\nend_header\n1 2 3 255\n4 5 6 0\n")
        assert np.array_equal(read_ply(path).points, [[1, 2, 3], [4, 5, 6]])

    @pytest.mark.parametrize("text", [
        "not a ply",
        "ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n",
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
    ])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "bad.ply"
        path.write_text(text)
        with pytest.raises(FormatError):
            read_ply(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            read_ply(tmp_path / "nope.ply")
