"""Median-split BVH over triangle centroids with array-based storage.

Nodes are stored in flat arrays so the compiled traversal kernel can walk
them without touching Python objects. Leaves hold at most 4 triangles.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import RAY_EPS, Hit, Ray, ray_triangle_intersect

LEAF_SIZE = 4


@dataclass(frozen=True)
class Bvh:
    bounds_min: np.ndarray  # (N,3)
    bounds_max: np.ndarray  # (N,3)
    left: np.ndarray  # (N,) int32, -1 for leaves
    right: np.ndarray  # (N,) int32, -1 for leaves
    start: np.ndarray  # (N,) int32, offset into tri_order (leaves only)
    count: np.ndarray  # (N,) int32, 0 for inner nodes
    tri_order: np.ndarray  # (T,) int32 permutation of triangle ids

    @property
    def n_nodes(self):
        return len(self.left)

    def depth(self):
        def go(i):
            if self.count[i] > 0:
                return 1
            return 1 + max(go(self.left[i]), go(self.right[i]))

        return go(0)


def build_bvh(mesh):
    """Binned median split on the longest centroid axis, leaf size <= 4."""
    if mesh.n_triangles == 0:
        raise DataError("cannot build a BVH over an empty mesh")
    v0, v1, v2 = mesh.corners()
    tri_min = np.minimum(np.minimum(v0, v1), v2)
    tri_max = np.maximum(np.maximum(v0, v1), v2)
    centroids = (tri_min + tri_max) / 2.0

    bounds_min, bounds_max = [], []
    left, right, start, count = [], [], [], []
    order = []

    def add_node():
        bounds_min.append(None)
        bounds_max.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    def build(ids):
        node = add_node()
        bounds_min[node] = tri_min[ids].min(axis=0)
        bounds_max[node] = tri_max[ids].max(axis=0)
        if len(ids) <= LEAF_SIZE:
            start[node] = len(order)
            count[node] = len(ids)
            order.extend(sorted(ids.tolist()))
            return node
        c = centroids[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = len(ids) // 2
        perm = np.argsort(c[:, axis], kind="stable")
        lo, hi = ids[perm[:mid]], ids[perm[mid:]]
        left[node] = build(lo)
        right[node] = build(hi)
        return node

    build(np.arange(mesh.n_triangles))
    return Bvh(
        bounds_min=np.ascontiguousarray(bounds_min, dtype=np.float64),
        bounds_max=np.ascontiguousarray(bounds_max, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        start=np.asarray(start, dtype=np.int32),
        count=np.asarray(count, dtype=np.int32),
        tri_order=np.asarray(order, dtype=np.int32),
    )


def _slab_hit(bmin, bmax, origin, inv_dir, t_near, t_far):
    t0 = (bmin - origin) * inv_dir
    t1 = (bmax - origin) * inv_dir
    tmin = np.minimum(t0, t1).max()
    tmax = np.maximum(t0, t1).min()
    return tmax >= max(tmin, t_near) and tmin <= t_far


def raycast(bvh, mesh, ray):
    """Nearest hit along the ray via BVH traversal (pure-Python reference).

    Ties on t break toward the smaller triangle id; hits with t <= RAY_EPS
    are rejected. Returns a Hit or None.
    """
    v0, v1, v2 = mesh.corners()
    origin = np.asarray(ray.origin, dtype=np.float64)
    direction = np.asarray(ray.direction, dtype=np.float64)
    with np.errstate(divide="ignore"):
        inv_dir = 1.0 / direction
    t_lo = max(ray.t_near, RAY_EPS)
    best_t = np.inf
    best_id = -1
    stack = [0]
    while stack:
        node = stack.pop()
        if not _slab_hit(
            bvh.bounds_min[node], bvh.bounds_max[node], origin, inv_dir,
            t_lo, min(ray.t_far, best_t),
        ):
            continue
        if bvh.count[node] > 0:
            s = bvh.start[node]
            for tri in bvh.tri_order[s : s + bvh.count[node]]:
                t = ray_triangle_intersect(ray, v0[tri], v1[tri], v2[tri])
                if t is None or t <= RAY_EPS:
                    continue
                if t < best_t or (t == best_t and tri < best_id):
                    best_t = t
                    best_id = int(tri)
        else:
            stack.append(int(bvh.right[node]))
            stack.append(int(bvh.left[node]))
    if best_id < 0:
        return None
    return Hit(t=best_t, triangle_id=best_id, point=origin + best_t * direction)


def raycast_linear(mesh, ray):
    """Exhaustive scan over all triangles; oracle twin of `raycast`."""
    v0, v1, v2 = mesh.corners()
    best_t = np.inf
    best_id = -1
    for tri in range(mesh.n_triangles):
        t = ray_triangle_intersect(ray, v0[tri], v1[tri], v2[tri])
        if t is None or t <= RAY_EPS:
            continue
        if t < best_t:
            best_t = t
            best_id = tri
    if best_id < 0:
        return None
    origin = np.asarray(ray.origin, dtype=np.float64)
    return Hit(t=best_t, triangle_id=best_id,
               point=origin + best_t * np.asarray(ray.direction))
