"""Synthetic indoor scenes: meshes, Lambert ground-truth renders, camera
trajectories with deliberate view imbalance, and scaffold perturbations.

World convention: z is up; all geometry lives inside [-1,1]^3. Ground-truth
shading is albedo * max(0, n.l) + 0.2 ambient (clamped), optionally plus a
Blinn-style glossy term to exercise view-dependent color.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import io as nio
from .bvh import build_bvh
from .errors import DataError, UsageError
from .geometry import CameraModel, TriangleMesh, camera_rays
from .kernels import raycast_rays
from .scaffold import DEFAULT_SHADOW_EPS, bake_coverage_map, bake_distance_map

AMBIENT = 0.2
GLOSSY_SHININESS = 16.0


@dataclass(frozen=True)
class SceneSpec:
    room_half_extents: tuple = (1.0, 1.0, 0.6)
    objects: tuple = ()  # dicts: {type, center, half|radius, albedo, checker}
    floor_albedo: tuple = (0.55, 0.5, 0.45)
    wall_albedo: tuple = (0.6, 0.6, 0.58)
    ceiling_albedo: tuple = (0.65, 0.65, 0.65)
    light_dir: tuple = (0.3, 0.2, 1.0)  # direction toward the light
    glossy: float = 0.0
    seed: int = 0
    image_size: int = 64
    fov_deg: float = 70.0
    n_train: int = 12
    focus: tuple = (0.35, 0.0, -0.25)
    orbit_radius: float = 0.35
    orbit_height: float = 0.35
    extrap_grid: tuple = (2, 2, 1)
    extrap_directions: int = 8

    def to_dict(self):
        d = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, tuple):
                v = list(v)
                if v and isinstance(v[0], dict):
                    v = [dict(o) for o in v]
            d[name] = v
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for name in cls.__dataclass_fields__:
            if name not in d:
                continue
            v = d[name]
            if isinstance(v, list):
                v = tuple(tuple(x.items()) for x in v) if name == "objects" else tuple(v)
            kwargs[name] = v
        if "objects" in kwargs:
            kwargs["objects"] = tuple(dict(items) for items in kwargs["objects"])
        return cls(**kwargs)


def load_spec(path):
    with open(path) as f:
        return SceneSpec.from_dict(json.load(f))


def save_spec(path, spec):
    with open(path, "w") as f:
        json.dump(spec.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")


@dataclass(frozen=True)
class SceneGeometry:
    mesh: TriangleMesh
    tri_albedo: np.ndarray  # (T,3)
    tri_checker: np.ndarray  # (T,) checker cell size, 0 = flat albedo
    tri_object: np.ndarray  # (T,) int, 0 = room shell
    light_dir: np.ndarray  # unit, toward the light
    glossy: float = 0.0


_CYCLIC = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


def _box_faces(center, half, inward):
    """Vertices and triangles of an axis-aligned box (8 shared vertices,
    2 triangles per face). Winding gives outward normals unless `inward`.
    """
    center = np.asarray(center, dtype=np.float64)
    half = np.asarray(half, dtype=np.float64)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                     dtype=np.float64)
    verts = center + signs * half

    def corner(sx, sy, sz):
        return ((sx + 1) // 2) * 4 + ((sy + 1) // 2) * 2 + ((sz + 1) // 2)

    tris = []
    for axis in range(3):
        b, c = _CYCLIC[axis]
        for sign in (1, -1):
            ids = []
            for db, dc in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                s = [0, 0, 0]
                s[axis], s[b], s[c] = sign, db, dc
                ids.append(corner(*s))
            if (sign < 0) != inward:
                ids.reverse()
            tris.append([ids[0], ids[1], ids[2]])
            tris.append([ids[0], ids[2], ids[3]])
    return verts, np.asarray(tris, dtype=np.int64)


def _uv_sphere(center, radius, stacks=6, slices=12):
    center = np.asarray(center, dtype=np.float64)
    verts = [center + [0.0, 0.0, radius]]
    for i in range(1, stacks):
        phi = np.pi * i / stacks
        for j in range(slices):
            theta = 2.0 * np.pi * j / slices
            verts.append(center + radius * np.array(
                [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
            ))
    verts.append(center + [0.0, 0.0, -radius])
    top, bottom = 0, len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * slices + (j % slices)

    tris = []
    for j in range(slices):
        tris.append([top, ring(1, j), ring(1, j + 1)])
    for i in range(1, stacks - 1):
        for j in range(slices):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, c, d])
            tris.append([a, d, b])
    for j in range(slices):
        tris.append([bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)])
    return np.asarray(verts), np.asarray(tris, dtype=np.int64)


def build_scene(spec):
    """Closed room shell (inward faces) plus objects; returns SceneGeometry."""
    hx, hy, hz = spec.room_half_extents
    if max(hx, hy, hz) > 1.0:
        raise DataError("room must fit inside [-1,1]^3")
    all_verts = []
    all_tris = []
    albedo = []
    checker = []
    obj_id = []

    def add(verts, tris, alb, chk, oid):
        base = sum(len(v) for v in all_verts)
        all_verts.append(verts)
        all_tris.append(tris + base)
        albedo.extend([alb] * len(tris))
        checker.extend([chk] * len(tris))
        obj_id.extend([oid] * len(tris))

    room_v, room_t = _box_faces((0.0, 0.0, 0.0), (hx, hy, hz), inward=True)
    # face order in _box_faces: +x,-x,+y,-y,+z,-z; 2 triangles each
    room_albedo = [spec.wall_albedo] * 8 + [spec.ceiling_albedo] * 2 + [spec.floor_albedo] * 2
    all_verts.append(room_v)
    all_tris.append(room_t)
    albedo.extend(room_albedo)
    checker.extend([0.0] * 12)
    obj_id.extend([0] * 12)

    for k, obj in enumerate(spec.objects, start=1):
        kind = obj["type"]
        if kind == "box":
            v, t = _box_faces(obj["center"], obj["half"], inward=False)
            extent = np.abs(np.asarray(obj["center"])) + np.asarray(obj["half"])
        elif kind == "sphere":
            v, t = _uv_sphere(obj["center"], obj["radius"])
            extent = np.abs(np.asarray(obj["center"])) + obj["radius"]
        else:
            raise DataError(f"unknown object type {kind!r}")
        if np.any(extent > np.asarray(spec.room_half_extents)):
            raise DataError(f"object {k} does not fit inside the room")
        add(v, t, tuple(obj.get("albedo", (0.7, 0.3, 0.25))),
            float(obj.get("checker", 0.0)), k)

    mesh = TriangleMesh(
        vertices=np.concatenate(all_verts, axis=0),
        triangles=np.concatenate(all_tris, axis=0).astype(np.int32),
    )
    light = np.asarray(spec.light_dir, dtype=np.float64)
    return SceneGeometry(
        mesh=mesh,
        tri_albedo=np.asarray(albedo, dtype=np.float64),
        tri_checker=np.asarray(checker, dtype=np.float64),
        tri_object=np.asarray(obj_id, dtype=np.int32),
        light_dir=light / np.linalg.norm(light),
        glossy=float(spec.glossy),
    )


def shade(geom, tri_ids, points, view_dirs):
    """Shade hit points: checkered albedo, Lambert + ambient, optional gloss.

    tri_ids (M,), points (M,3), view_dirs (M,3) = unit ray directions
    (camera to surface). Returns colors (M,3) in [0,1].
    """
    normals = geom.mesh.face_normals()[tri_ids]
    albedo = geom.tri_albedo[tri_ids].copy()
    chk = geom.tri_checker[tri_ids]
    has_chk = chk > 0.0
    if np.any(has_chk):
        # parametrize each face by the two axes orthogonal to its dominant
        # normal axis
        ax = np.argmax(np.abs(normals[has_chk]), axis=1)
        u_ax = np.array([_CYCLIC[a][0] for a in ax])
        v_ax = np.array([_CYCLIC[a][1] for a in ax])
        p = points[has_chk]
        rows = np.arange(len(p))
        u = p[rows, u_ax] / chk[has_chk]
        v = p[rows, v_ax] / chk[has_chk]
        dark = (np.floor(u) + np.floor(v)) % 2 == 0
        albedo[np.where(has_chk)[0][dark]] *= 0.5
    lambert = np.maximum(0.0, normals @ geom.light_dir)
    color = albedo * lambert[:, None] + AMBIENT
    if geom.glossy > 0.0:
        refl = 2.0 * lambert[:, None] * normals - geom.light_dir
        spec = np.maximum(0.0, np.einsum("mk,mk->m", refl, -view_dirs))
        color = color + geom.glossy * (spec ** GLOSSY_SHININESS)[:, None]
    return np.clip(color, 0.0, 1.0)


def render_gt(geom, bvh, camera):
    """Primary-ray ground truth: (image HxWx3, distance HxW with inf misses)."""
    origins, dirs = camera_rays(camera)
    t, tri = raycast_rays(bvh, geom.mesh, origins, dirs)
    hit = np.isfinite(t)
    image = np.zeros((len(origins), 3))
    if np.any(hit):
        pts = origins[hit] + t[hit, None] * dirs[hit]
        image[hit] = shade(geom, tri[hit], pts, dirs[hit])
    h, w = camera.height, camera.width
    return image.reshape(h, w, 3), t.reshape(h, w)


# ---------------------------------------------------------------------------
# Cameras and trajectory

def look_at(position, target, width, height, fov_deg, up=(0.0, 0.0, 1.0)):
    position = np.asarray(position, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(f)
    if norm < 1e-12:
        raise UsageError("look_at target coincides with the position")
    f /= norm
    up = np.asarray(up, dtype=np.float64)
    if abs(f @ up) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    xc = np.cross(f, up)
    xc /= np.linalg.norm(xc)
    zc = -f
    yc = np.cross(zc, xc)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = xc, yc, zc, position
    fx = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    return CameraModel(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                       width=width, height=height, cam_to_world=m)


def interpolate_cameras(cam_a, cam_b):
    """Pose midpoint: position lerp + rotation slerp, shared intrinsics."""
    rots = Rotation.from_matrix([cam_a.rotation, cam_b.rotation])
    mid_rot = Slerp([0.0, 1.0], rots)(0.5).as_matrix()
    m = np.eye(4)
    m[:3, :3] = mid_rot
    m[:3, 3] = (cam_a.position + cam_b.position) / 2.0
    return CameraModel(fx=cam_a.fx, fy=cam_a.fy, cx=cam_a.cx, cy=cam_a.cy,
                       width=cam_a.width, height=cam_a.height, cam_to_world=m)


def make_trajectory(spec):
    """Training/interpolation/extrapolation camera sets.

    Training views: 80% on an arc orbiting the focus point, 20% sweeping the
    rest of the room from near its center. Interpolation views are pose
    midpoints of consecutive training views. Extrapolation views sit on a
    position grid, each carrying `extrap_directions` evenly spaced yaws.
    """
    if spec.n_train < 4:
        raise UsageError("need at least 4 training views")
    size = spec.image_size
    focus = np.asarray(spec.focus, dtype=np.float64)
    hx, hy, hz = spec.room_half_extents
    n_focus = int(round(0.8 * spec.n_train))
    n_sweep = spec.n_train - n_focus

    train = []
    for i in range(n_focus):
        theta = 2.0 * np.pi * (0.75 * i / max(n_focus - 1, 1))  # 270 degree arc
        pos = focus + np.array([
            spec.orbit_radius * np.cos(theta),
            spec.orbit_radius * np.sin(theta),
            spec.orbit_height,
        ])
        pos = np.clip(pos, [-hx + 0.08, -hy + 0.08, -hz + 0.08],
                      [hx - 0.08, hy - 0.08, hz - 0.08])
        train.append(look_at(pos, focus, size, size, spec.fov_deg))
    for i in range(n_sweep):
        yaw = 2.0 * np.pi * i / max(n_sweep, 1) + 0.5
        pos = np.array([-0.2 * hx, -0.2 * hy, 0.1 * hz])
        target = pos + np.array([np.cos(yaw), np.sin(yaw), 0.15])
        train.append(look_at(pos, target, size, size, spec.fov_deg))

    interp = [interpolate_cameras(a, b) for a, b in zip(train[:-1], train[1:])]

    extrap = []
    gx, gy, gz = spec.extrap_grid
    xs = np.linspace(-0.5 * hx, 0.5 * hx, gx) if gx > 1 else [0.0]
    ys = np.linspace(-0.5 * hy, 0.5 * hy, gy) if gy > 1 else [0.0]
    zs = np.linspace(-0.3 * hz, 0.3 * hz, gz) if gz > 1 else [0.0]
    for x in xs:
        for y in ys:
            for z in zs:
                for k in range(spec.extrap_directions):
                    yaw = 2.0 * np.pi * k / spec.extrap_directions
                    pos = np.array([x, y, z])
                    target = pos + np.array([np.cos(yaw), np.sin(yaw), 0.1])
                    extrap.append(look_at(pos, target, size, size, spec.fov_deg))
    return train, interp, extrap


# ---------------------------------------------------------------------------
# Scaffold perturbation

PERTURB_MODES = ("vertex-noise", "delete-random-faces", "offset-object")


def _connected_components(mesh):
    """Vertex-connectivity components; returns per-vertex component labels."""
    parent = np.arange(len(mesh.vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for tri in mesh.triangles:
        a = find(tri[0])
        for other in (tri[1], tri[2]):
            b = find(other)
            if a != b:
                parent[b] = a
    return np.array([find(i) for i in range(len(parent))])


def perturb_scaffold(mesh, mode, magnitude, seed=0):
    """Controlled scaffold corruption used for robustness experiments.

    vertex-noise: gaussian vertex jitter with sigma = magnitude.
    delete-random-faces: drop floor(magnitude * T) random triangles.
    offset-object: translate one non-largest connected component (a random
    object) by magnitude along a random unit direction.
    """
    if mode not in PERTURB_MODES:
        raise UsageError(f"unknown perturbation mode {mode!r}")
    rng = np.random.default_rng(seed)
    if magnitude == 0.0:
        return mesh
    if mode == "vertex-noise":
        v = mesh.vertices + rng.normal(0.0, magnitude, size=mesh.vertices.shape)
        return TriangleMesh(vertices=v, triangles=mesh.triangles)
    if mode == "delete-random-faces":
        n_drop = int(np.floor(magnitude * mesh.n_triangles))
        drop = rng.choice(mesh.n_triangles, size=n_drop, replace=False)
        keep = np.setdiff1d(np.arange(mesh.n_triangles), drop)
        return TriangleMesh(vertices=mesh.vertices, triangles=mesh.triangles[keep])
    # offset-object
    labels = _connected_components(mesh)
    used = np.unique(mesh.triangles)
    comp_ids, counts = np.unique(labels[used], return_counts=True)
    if len(comp_ids) < 2:
        raise DataError("mesh has no separate object component to offset")
    shell = comp_ids[np.argmax(counts)]
    candidates = comp_ids[comp_ids != shell]
    target = rng.choice(candidates)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    v = mesh.vertices.copy()
    v[labels == target] += magnitude * direction
    return TriangleMesh(vertices=v, triangles=mesh.triangles)


# ---------------------------------------------------------------------------
# Dataset generation

def _map_views(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def generate_dataset(spec, out_dir, threads=1, shadow_eps=DEFAULT_SHADOW_EPS):
    """Write the full dataset directory for a scene spec.

    Layout: spec.json, scaffold.obj, cameras_{train,interp,extrap}.json,
    gt/<split>/<i>.ppm (+ depth_<i>.pfm), priors/dist_<i>.pfm and
    cov_<i>.pfm for training views, and cov_<split>_<i>.pfm for the test
    splits (used by coverage-binned evaluation).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geom = build_scene(spec)
    bvh = build_bvh(geom.mesh)
    train, interp, extrap = make_trajectory(spec)

    save_spec(out / "spec.json", spec)
    nio.write_obj(out / "scaffold.obj", geom.mesh.vertices, geom.mesh.triangles)
    nio.write_cameras(out / "cameras_train.json", train)
    nio.write_cameras(out / "cameras_interp.json", interp)
    nio.write_cameras(out / "cameras_extrap.json", extrap)

    (out / "priors").mkdir(exist_ok=True)
    for split, cams in (("train", train), ("interp", interp), ("extrap", extrap)):
        split_dir = out / "gt" / split
        split_dir.mkdir(parents=True, exist_ok=True)
        rendered = _map_views(lambda c: render_gt(geom, bvh, c), cams, threads)
        for i, (image, dist) in enumerate(rendered):
            nio.write_ppm(split_dir / f"{i}.ppm", image)
            nio.write_pfm(split_dir / f"depth_{i}.pfm", dist)

    bake_priors(geom.mesh, train, out, eps=shadow_eps, threads=threads, bvh=bvh)

    # coverage of the test splits, for coverage-binned evaluation
    train_dmaps = [read_dmap(out / "priors" / f"dist_{i}.pfm") for i in range(len(train))]
    for split, cams in (("interp", interp), ("extrap", extrap)):
        covs = _map_views(
            lambda c: bake_coverage_map(bvh, geom.mesh, c, train, train_dmaps,
                                        eps=shadow_eps),
            cams, threads,
        )
        for i, cov in enumerate(covs):
            nio.write_pfm(out / "priors" / f"cov_{split}_{i}.pfm",
                          cov.astype(np.float64))

    # the imbalance construction must leave genuinely few-shot extrap pixels
    few_shot = 0
    for i in range(len(extrap)):
        cov = nio.read_pfm(out / "priors" / f"cov_extrap_{i}.pfm")
        few_shot += int(np.count_nonzero((cov >= 1) & (cov <= 2)))
    if few_shot == 0:
        raise DataError("generated trajectory has no low-coverage extrapolation pixels")
    return out


def read_dmap(path):
    d = nio.read_pfm(path)
    return np.where(d > 1e30, np.inf, d)


def bake_priors(mesh, cameras, out_dir, eps=DEFAULT_SHADOW_EPS, threads=1, bvh=None):
    """Bake dist_<i>.pfm / cov_<i>.pfm for a camera set into out/priors."""
    out = Path(out_dir)
    (out / "priors").mkdir(parents=True, exist_ok=True)
    if bvh is None:
        bvh = build_bvh(mesh)
    dmaps = _map_views(lambda c: bake_distance_map(bvh, mesh, c), cameras, threads)
    for i, d in enumerate(dmaps):
        nio.write_pfm(out / "priors" / f"dist_{i}.pfm",
                      np.where(np.isfinite(d), d, np.float32(1e30)))
    covs = _map_views(
        lambda c: bake_coverage_map(bvh, mesh, c, cameras, dmaps, eps=eps),
        cameras, threads,
    )
    for i, cov in enumerate(covs):
        nio.write_pfm(out / "priors" / f"cov_{i}.pfm", cov.astype(np.float64))
