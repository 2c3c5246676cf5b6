import json
from pathlib import Path

import numpy as np
import pytest

from nerfvs import io as nio
from nerfvs.bvh import build_bvh
from nerfvs.errors import DataError, UsageError
from nerfvs.scaffold import bake_coverage_map, bake_distance_map
from nerfvs.scene import (
    SceneSpec,
    build_scene,
    generate_dataset,
    interpolate_cameras,
    look_at,
    make_trajectory,
    perturb_scaffold,
    render_gt,
    save_spec,
    load_spec,
)
from nerfvs.geometry import camera_rays
from nerfvs.kernels import raycast_rays


def edge_audit(mesh):
    """Count how many triangles share each undirected edge."""
    counts = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


class TestBuildScene:
    def test_empty_room_is_twelve_triangles(self):
        geom = build_scene(SceneSpec(objects=()))
        assert geom.mesh.n_triangles == 12

    def test_room_plus_box(self):
        geom = build_scene(SceneSpec(objects=(
            {"type": "box", "center": [0.2, 0.0, -0.2], "half": [0.1, 0.1, 0.1]},
        )))
        assert geom.mesh.n_triangles == 24
        assert np.sum(geom.tri_object == 0) == 12
        assert np.sum(geom.tri_object == 1) == 12

    def test_watertight_shells(self):
        geom = build_scene(SceneSpec(objects=(
            {"type": "box", "center": [0.2, 0.0, -0.2], "half": [0.1, 0.1, 0.1]},
            {"type": "sphere", "center": [-0.4, 0.3, -0.3], "radius": 0.15},
        )))
        counts = edge_audit(geom.mesh)
        assert set(counts.values()) == {2}

    def test_object_outside_room_rejected(self):
        with pytest.raises(DataError):
            build_scene(SceneSpec(objects=(
                {"type": "box", "center": [0.9, 0.0, 0.0], "half": [0.3, 0.1, 0.1]},
            )))

    def test_unknown_object_type_rejected(self):
        with pytest.raises(DataError):
            build_scene(SceneSpec(objects=({"type": "torus", "center": [0, 0, 0]},)))

    def test_wall_normals_point_inward(self):
        geom = build_scene(SceneSpec(objects=()))
        normals = geom.mesh.face_normals()
        v0, v1, v2 = geom.mesh.corners()
        centers = (v0 + v1 + v2) / 3.0
        # inward: normal points from the wall toward the room center (origin)
        assert np.all(np.einsum("ij,ij->i", normals, -centers) > 0)


class TestRenderGt:
    def test_closed_room_has_no_miss_pixels(self):
        spec = SceneSpec(objects=(), image_size=32)
        geom = build_scene(spec)
        bvh = build_bvh(geom.mesh)
        cam = look_at((0.0, 0.0, 0.0), (0.5, 0.2, -0.1), 32, 32, 70.0)
        image, dist = render_gt(geom, bvh, cam)
        assert np.all(np.isfinite(dist))
        assert np.all(image.sum(axis=2) > 0.0)

    def test_analytic_shading_on_floor(self):
        """Light along the floor normal: color = albedo * 1 + 0.2 ambient."""
        spec = SceneSpec(objects=(), light_dir=(0.0, 0.0, 1.0),
                         floor_albedo=(0.4, 0.5, 0.6), image_size=16)
        geom = build_scene(spec)
        bvh = build_bvh(geom.mesh)
        cam = look_at((0.0, 0.0, 0.2), (0.0, 0.0, -0.6), 16, 16, 40.0)
        image, _ = render_gt(geom, bvh, cam)
        expected = np.array([0.6, 0.7, 0.8])  # albedo + 0.2, below clip
        np.testing.assert_allclose(image.reshape(-1, 3),
                                   np.broadcast_to(expected, (256, 3)), atol=1e-12)

    def test_gt_distance_equals_bake(self, tiny_scene_spec):
        geom = build_scene(tiny_scene_spec)
        bvh = build_bvh(geom.mesh)
        cam = make_trajectory(tiny_scene_spec)[0][0]
        _, dist = render_gt(geom, bvh, cam)
        dmap = bake_distance_map(bvh, geom.mesh, cam)
        np.testing.assert_array_equal(dist, dmap)

    def test_checker_produces_two_tones(self):
        spec = SceneSpec(objects=(
            {"type": "box", "center": [0.0, 0.0, -0.3], "half": [0.3, 0.3, 0.2],
             "albedo": [0.8, 0.4, 0.2], "checker": 0.1},
        ), light_dir=(0.0, 0.0, 1.0), image_size=32)
        geom = build_scene(spec)
        bvh = build_bvh(geom.mesh)
        cam = look_at((0.0, 0.0, 0.4), (0.0, 0.0, -0.3), 32, 32, 60.0)
        image, _ = render_gt(geom, bvh, cam)
        reds = np.unique(image[..., 0].round(6))
        assert len(reds) == 2  # dark and light checker cells on the top face

    def test_glossy_term_is_view_dependent(self):
        spec = SceneSpec(objects=(), glossy=0.6, image_size=24)
        geom = build_scene(spec)
        bvh = build_bvh(geom.mesh)
        cam_a = look_at((0.0, 0.0, 0.0), (0.3, 0.2, -0.55), 24, 24, 60.0)
        img_a, _ = render_gt(geom, bvh, cam_a)
        geom_flat = build_scene(SceneSpec(objects=(), glossy=0.0, image_size=24))
        img_flat, _ = render_gt(geom_flat, bvh, cam_a)
        assert np.any(img_a > img_flat + 1e-6)


class TestTrajectory:
    def test_counts(self):
        spec = SceneSpec(n_train=10, extrap_grid=(2, 2, 1), extrap_directions=8)
        train, interp, extrap = make_trajectory(spec)
        assert len(train) == 10
        assert len(interp) == 9
        assert len(extrap) == 32

    def test_minimum_views(self):
        with pytest.raises(UsageError):
            make_trajectory(SceneSpec(n_train=3))

    def test_cameras_inside_room(self):
        spec = SceneSpec()
        for cam in sum(make_trajectory(spec), []):
            assert np.all(np.abs(cam.position) <= np.array(spec.room_half_extents))

    def test_look_at_points_at_target(self, rng):
        pos = rng.uniform(-0.5, 0.5, 3)
        target = rng.uniform(-0.5, 0.5, 3)
        cam = look_at(pos, target, 32, 32, 60.0)
        to_target = target - pos
        to_target /= np.linalg.norm(to_target)
        np.testing.assert_allclose(cam.forward, to_target, atol=1e-12)

    def test_interpolation_midpoint(self, rng):
        a = look_at(rng.uniform(-0.5, 0.5, 3), (0.2, 0.0, -0.2), 32, 32, 60.0)
        b = look_at(rng.uniform(-0.5, 0.5, 3), (0.2, 0.0, -0.2), 32, 32, 60.0)
        mid = interpolate_cameras(a, b)
        np.testing.assert_allclose(mid.position, (a.position + b.position) / 2)
        # slerp midpoint is equidistant (in rotation angle) from both ends
        from scipy.spatial.transform import Rotation
        ang_a = Rotation.from_matrix(mid.rotation @ a.rotation.T).magnitude()
        ang_b = Rotation.from_matrix(mid.rotation @ b.rotation.T).magnitude()
        assert ang_a == pytest.approx(ang_b, abs=1e-9)

    def test_interpolating_identical_cameras(self):
        a = look_at((0.1, 0.2, 0.0), (0.0, 0.0, -0.3), 32, 32, 60.0)
        mid = interpolate_cameras(a, a)
        np.testing.assert_allclose(mid.cam_to_world, a.cam_to_world, atol=1e-12)

    def test_coverage_imbalance(self):
        """Focus-region coverage median >= 3x wall-region coverage median."""
        spec = SceneSpec(
            room_half_extents=(0.9, 0.9, 0.55),
            objects=({"type": "box", "center": [0.35, 0.0, -0.3],
                      "half": [0.2, 0.25, 0.18]},),
            image_size=64, n_train=12, focus=(0.35, 0.0, -0.2),
        )
        geom = build_scene(spec)
        bvh = build_bvh(geom.mesh)
        train, _, _ = make_trajectory(spec)
        dmaps = [bake_distance_map(bvh, geom.mesh, c) for c in train]
        focus_cov, wall_cov = [], []
        for cam in train:
            cov = bake_coverage_map(bvh, geom.mesh, cam, train, dmaps).ravel()
            origins, dirs = camera_rays(cam)
            t, tri = raycast_rays(bvh, geom.mesh, origins, dirs)
            hit = np.isfinite(t)
            on_object = geom.tri_object[np.where(hit, tri, 0)] > 0
            focus_cov.append(cov[hit & on_object])
            wall_cov.append(cov[hit & ~on_object])
        focus_med = np.median(np.concatenate(focus_cov))
        wall_med = np.median(np.concatenate(wall_cov))
        assert focus_med >= 3 * wall_med


@pytest.fixture(scope="module")
def mesh():
    return build_scene(SceneSpec(objects=(
        {"type": "box", "center": [0.2, 0.0, -0.2], "half": [0.15, 0.15, 0.15]},
    ))).mesh


class TestPerturb:

    def test_zero_magnitude_identity(self, mesh):
        out = perturb_scaffold(mesh, "vertex-noise", 0.0)
        assert out is mesh

    def test_vertex_noise(self, mesh):
        out = perturb_scaffold(mesh, "vertex-noise", 0.02, seed=3)
        assert out.n_triangles == mesh.n_triangles
        diffs = np.linalg.norm(out.vertices - mesh.vertices, axis=1)
        assert np.all(diffs > 0)
        assert np.std(out.vertices - mesh.vertices) == pytest.approx(0.02, rel=0.3)

    def test_delete_fraction(self, mesh):
        out = perturb_scaffold(mesh, "delete-random-faces", 0.10, seed=1)
        assert out.n_triangles == mesh.n_triangles - int(0.10 * mesh.n_triangles)

    def test_offset_object_moves_only_object_pixels(self, mesh):
        moved = perturb_scaffold(mesh, "offset-object", 0.05, seed=2)
        delta = np.linalg.norm(moved.vertices - mesh.vertices, axis=1)
        shifted = delta > 0
        assert np.all(np.isclose(delta[shifted], 0.05))
        assert 0 < shifted.sum() < len(mesh.vertices)
        # distance maps differ only on pixels hitting the moved object region
        cam = look_at((-0.4, 0.0, 0.1), (0.2, 0.0, -0.2), 48, 48, 60.0)
        d_clean = bake_distance_map(build_bvh(mesh), mesh, cam)
        d_moved = bake_distance_map(build_bvh(moved), moved, cam)
        _, tri_clean = raycast_rays(build_bvh(mesh), mesh, *camera_rays(cam))
        _, tri_moved = raycast_rays(build_bvh(moved), moved, *camera_rays(cam))
        changed = (d_clean != d_moved).ravel()
        touches_object = (tri_clean >= 12) | (tri_moved >= 12)
        assert np.all(touches_object[changed])

    def test_offset_requires_second_component(self):
        shell = build_scene(SceneSpec(objects=())).mesh
        with pytest.raises(DataError):
            perturb_scaffold(shell, "offset-object", 0.05)

    def test_unknown_mode(self, mesh):
        with pytest.raises(UsageError):
            perturb_scaffold(mesh, "smooth", 0.1)

    def test_seeded_determinism(self, mesh):
        a = perturb_scaffold(mesh, "vertex-noise", 0.01, seed=9)
        b = perturb_scaffold(mesh, "vertex-noise", 0.01, seed=9)
        np.testing.assert_array_equal(a.vertices, b.vertices)


class TestSpecIo:
    def test_roundtrip(self, tmp_path, tiny_scene_spec):
        path = tmp_path / "spec.json"
        save_spec(path, tiny_scene_spec)
        assert load_spec(path) == tiny_scene_spec

    def test_dict_roundtrip(self, tiny_scene_spec):
        assert SceneSpec.from_dict(tiny_scene_spec.to_dict()) == tiny_scene_spec


class TestDataset:
    def test_layout(self, tiny_dataset, tiny_scene_spec):
        out = Path(tiny_dataset)
        assert (out / "spec.json").exists()
        assert (out / "scaffold.obj").exists()
        n = tiny_scene_spec.n_train
        cams = json.loads((out / "cameras_train.json").read_text())
        assert len(cams) == n
        for i in range(n):
            assert (out / "gt" / "train" / f"{i}.ppm").exists()
            assert (out / "priors" / f"dist_{i}.pfm").exists()
            assert (out / "priors" / f"cov_{i}.pfm").exists()
        n_interp = len(json.loads((out / "cameras_interp.json").read_text()))
        assert n_interp == n - 1
        assert (out / "priors" / f"cov_interp_{n_interp - 1}.pfm").exists()

    def test_coverage_maps_are_integral(self, tiny_dataset):
        cov = nio.read_pfm(Path(tiny_dataset) / "priors" / "cov_0.pfm")
        np.testing.assert_array_equal(cov, cov.round())
        assert cov.max() >= 1

    def test_gt_images_in_range(self, tiny_dataset):
        img = nio.read_ppm(Path(tiny_dataset) / "gt" / "train" / "0.ppm")
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_byte_identical_determinism(self, tiny_scene_spec, tiny_dataset,
                                         tmp_path):
        """Same spec regenerated (even multithreaded) matches byte-for-byte."""
        again = tmp_path / "again"
        generate_dataset(tiny_scene_spec, again, threads=3)
        ref = Path(tiny_dataset)
        ref_files = sorted(p.relative_to(ref) for p in ref.rglob("*") if p.is_file())
        new_files = sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
        assert ref_files == new_files
        for rel in ref_files:
            assert nio.sha256_of(ref / rel) == nio.sha256_of(again / rel), rel
