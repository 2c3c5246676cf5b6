"""Bake per-view distance maps and occlusion-aware view-coverage maps.

Distance maps store Euclidean distance from the camera center to the mesh
along each pixel ray (not z-depth); misses are +inf. Coverage counts how
many training cameras see the surface point behind each pixel, with
occlusion decided by shadow-map comparison against the training views' own
distance maps.
"""

import numpy as np

from . import kernels
from .errors import DataError
from .geometry import camera_rays, project_points

# shadow-map comparison tolerance, in scene units of the [-1,1] box
DEFAULT_SHADOW_EPS = 0.01

MISS = np.inf


def bake_distance_map(bvh, mesh, camera, t_far=np.inf):
    """Per-pixel nearest-hit distance through pixel centers; misses = inf."""
    origins, dirs = camera_rays(camera)
    t, _ = kernels.raycast_rays(bvh, mesh, origins, dirs, t_near=0.0, t_far=t_far)
    return t.reshape(camera.height, camera.width)


def visibility_test(points, camera, dmap, eps=DEFAULT_SHADOW_EPS):
    """Shadow-map visibility of world points from one camera.

    True where a point projects in-frustum, in front of the camera, and its
    distance agrees with the camera's baked distance map within eps at the
    nearest pixel. Accepts (3,) or (M,3); returns bool of matching shape.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    px, py, dist, in_front = project_points(camera, pts)
    inside = in_front & (px >= 0) & (px < camera.width) & (py >= 0) & (py < camera.height)
    ix = np.clip(np.floor(px).astype(np.int64), 0, camera.width - 1)
    iy = np.clip(np.floor(py).astype(np.int64), 0, camera.height - 1)
    ref = dmap[iy, ix]
    ok = inside & np.isfinite(ref) & (np.abs(dist - ref) <= eps)
    if np.asarray(points).ndim == 1:
        return bool(ok[0])
    return ok


def bake_coverage_map(bvh, mesh, target_camera, training_cameras, training_dmaps,
                      eps=DEFAULT_SHADOW_EPS):
    """Per-pixel count of training cameras that observe the surface point.

    Pixels whose ray misses the scaffold get 0.
    """
    if len(training_cameras) != len(training_dmaps):
        raise DataError("one distance map per training camera required")
    origins, dirs = camera_rays(target_camera)
    t, _ = kernels.raycast_rays(bvh, mesh, origins, dirs)
    hit = np.isfinite(t)
    points = origins[hit] + t[hit, None] * dirs[hit]
    counts = np.zeros(hit.sum(), dtype=np.int32)
    for cam, dmap in zip(training_cameras, training_dmaps):
        counts += visibility_test(points, cam, dmap, eps=eps).astype(np.int32)
    cov = np.zeros(len(origins), dtype=np.int32)
    cov[hit] = counts
    return cov.reshape(target_camera.height, target_camera.width)


def coverage_oracle(bvh, mesh, target_camera, training_cameras):
    """Independent coverage check: segment-cast from each surface point
    toward each training camera center and count unobstructed, in-frustum
    cameras. Used to validate bake_coverage_map; O(pixels x cameras) rays.
    """
    origins, dirs = camera_rays(target_camera)
    t, _ = kernels.raycast_rays(bvh, mesh, origins, dirs)
    hit = np.isfinite(t)
    points = origins[hit] + t[hit, None] * dirs[hit]
    counts = np.zeros(hit.sum(), dtype=np.int32)
    for cam in training_cameras:
        px, py, dist, in_front = project_points(cam, points)
        inside = in_front & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
        # segment from the surface point toward the camera center
        seg = cam.position[None, :] - points
        seg_len = np.linalg.norm(seg, axis=1)
        seg_dir = seg / seg_len[:, None]
        t_block, _ = kernels.raycast_rays(bvh, mesh, points, seg_dir,
                                          t_near=0.0, t_far=np.inf)
        unobstructed = t_block >= seg_len - 1e-9
        counts += (inside & unobstructed).astype(np.int32)
    cov = np.zeros(len(origins), dtype=np.int32)
    cov[hit] = counts
    return cov.reshape(target_camera.height, target_camera.width)
