"""Camera math, rays, triangle meshes and ray-triangle intersection.

Conventions (fixed here, documented once): right-handed world, the camera
looks down -z in its own frame, image y grows downward, integer pixel i
samples at i + 0.5. Ray parameters are Euclidean distances because ray
directions are unit length.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError

# reject hits closer than this to the ray origin (self-intersection guard)
RAY_EPS = 1e-6

# |det| below this counts as ray parallel to the triangle plane
_MT_DET_EPS = 1e-12


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit length
    t_near: float = 0.0
    t_far: float = np.inf

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise UsageError("ray direction must be unit length")
        if not self.t_near < self.t_far:
            raise UsageError("require t_near < t_far")

    def at(self, t):
        return np.asarray(self.origin) + t * np.asarray(self.direction)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_to_world: np.ndarray  # 4x4 rigid transform

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise UsageError("focal lengths must be positive")
        m = np.asarray(self.cam_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise UsageError("cam_to_world must be 4x4")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-8):
            raise UsageError("cam_to_world rotation block is not orthonormal")
        if np.linalg.det(r) < 0:
            raise UsageError("cam_to_world rotation must be proper (det=+1)")
        object.__setattr__(self, "cam_to_world", m)

    @property
    def rotation(self):
        return self.cam_to_world[:3, :3]

    @property
    def position(self):
        return self.cam_to_world[:3, 3]

    @property
    def forward(self):
        # camera looks down -z in its own frame
        return -self.rotation[:, 2]


def pixel_to_ray(camera, px, py, t_near=0.0, t_far=np.inf):
    """Back-project one pixel coordinate into a world-space unit ray."""
    o, d = pixels_to_rays(camera, np.array([px]), np.array([py]))
    return Ray(origin=o[0], direction=d[0], t_near=t_near, t_far=t_far)


def pixels_to_rays(camera, px, py):
    """Vectorized back-projection. px/py are real pixel coordinates.

    Returns (origins (N,3), directions (N,3)), directions unit length.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    x = (px - camera.cx) / camera.fx
    y = -(py - camera.cy) / camera.fy
    d_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    d_world = d_cam @ camera.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.position, d_world.shape).copy()
    return origins, d_world


def camera_rays(camera):
    """One ray per pixel center, row-major (H*W, 3) origins/directions."""
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width]
    return pixels_to_rays(camera, xs.ravel() + 0.5, ys.ravel() + 0.5)


def project_point(camera, point):
    """Project one world point; returns (px, py, dist, in_front)."""
    px, py, dist, in_front = project_points(camera, np.asarray(point)[None, :])
    return float(px[0]), float(py[0]), float(dist[0]), bool(in_front[0])


def project_points(camera, points):
    """Vectorized projection of (N,3) world points.

    dist is the Euclidean distance to the camera center (not z-depth);
    (px, py) are meaningful only where in_front is true.
    """
    points = np.asarray(points, dtype=np.float64)
    rel = points - camera.position
    pc = rel @ camera.rotation  # camera-frame coords (R^T rel)
    dist = np.linalg.norm(rel, axis=-1)
    in_front = pc[..., 2] < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(in_front, -1.0 / pc[..., 2], 0.0)
    px = camera.cx + camera.fx * pc[..., 0] * inv_z
    py = camera.cy - camera.fy * pc[..., 1] * inv_z
    return px, py, dist, in_front


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V,3) float64
    triangles: np.ndarray  # (T,3) int32

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
            raise DataError("mesh arrays must be (V,3) and (T,3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise DataError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if len(t):
            areas = 0.5 * np.linalg.norm(
                np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1
            )
            if np.any(areas <= 1e-12):
                raise DataError("mesh contains a degenerate triangle")

    @property
    def n_triangles(self):
        return len(self.triangles)

    def corners(self):
        """Per-triangle corner arrays (v0, v1, v2), each (T,3)."""
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def face_normals(self):
        v0, v1, v2 = self.corners()
        n = np.cross(v1 - v0, v2 - v0)
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass(frozen=True)
class Hit:
    t: float
    triangle_id: int
    point: np.ndarray


def ray_triangle_intersect(ray, v0, v1, v2):
    """Moller-Trumbore intersection; returns t in [t_near, t_far] or None."""
    v0 = np.asarray(v0, dtype=np.float64)
    e1 = np.asarray(v1, dtype=np.float64) - v0
    e2 = np.asarray(v2, dtype=np.float64) - v0
    d = np.asarray(ray.direction, dtype=np.float64)
    pvec = np.cross(d, e2)
    det = e1 @ pvec
    if abs(det) < _MT_DET_EPS:
        return None
    inv_det = 1.0 / det
    tvec = np.asarray(ray.origin, dtype=np.float64) - v0
    u = (tvec @ pvec) * inv_det
    if u < 0.0 or u > 1.0:
        return None
    qvec = np.cross(tvec, e1)
    v = (d @ qvec) * inv_det
    if v < 0.0 or u + v > 1.0:
        return None
    t = (e2 @ qvec) * inv_det
    if t < ray.t_near or t > ray.t_far:
        return None
    return float(t)


def intersect_rays_brute(mesh, origins, dirs, t_near=0.0, t_far=np.inf,
                         eps=RAY_EPS, chunk=4_000_000):
    """Exhaustive linear-scan raycast of many rays against all triangles.

    Vectorized Moller-Trumbore over the full ray x triangle product (in
    ray chunks to bound memory). Ties on t resolve to the smallest
    triangle id. Returns (t (N,), tri_id (N,) int32); misses are
    (inf, -1). Serves as the oracle the BVH path is tested against.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    v0, v1, v2 = mesh.corners()
    e1 = v1 - v0
    e2 = v2 - v0
    n_rays = len(origins)
    n_tri = len(v0)
    out_t = np.full(n_rays, np.inf)
    out_id = np.full(n_rays, -1, dtype=np.int32)
    rows = max(1, chunk // max(n_tri, 1))
    for lo in range(0, n_rays, rows):
        hi = min(lo + rows, n_rays)
        o = origins[lo:hi, None, :]  # (R,1,3)
        d = dirs[lo:hi, None, :]
        pvec = np.cross(d, e2[None, :, :])  # (R,T,3)
        det = np.einsum("rtk,tk->rt", pvec, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = np.where(np.abs(det) > _MT_DET_EPS, 1.0 / det, 0.0)
        tvec = o - v0[None, :, :]
        u = np.einsum("rtk,rtk->rt", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("rtk,rtk->rt", qvec, np.broadcast_to(d, qvec.shape)) * inv_det
        t = np.einsum("rtk,tk->rt", qvec, e2) * inv_det
        ok = (
            (np.abs(det) > _MT_DET_EPS)
            & (u >= 0.0)
            & (v >= 0.0)
            & (u + v <= 1.0)
            & (t >= t_near)
            & (t <= t_far)
            & (t > eps)
        )
        t = np.where(ok, t, np.inf)
        best = np.argmin(t, axis=1)  # first minimum = smallest triangle id
        rows_idx = np.arange(hi - lo)
        best_t = t[rows_idx, best]
        hit = np.isfinite(best_t)
        out_t[lo:hi] = best_t
        out_id[lo:hi] = np.where(hit, best.astype(np.int32), -1)
    return out_t, out_id
