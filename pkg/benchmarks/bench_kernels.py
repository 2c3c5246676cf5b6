#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the four hot paths (ray/BVH intersection, composite forward/backward,
trilinear gather/scatter) on both backends and prints a speedup table.

Usage: python3 benchmarks/bench_kernels.py [--rays 20000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from nerfvs.bvh import build_bvh
from nerfvs.geometry import TriangleMesh
from nerfvs.kernels import numpy_backend
from nerfvs.renderer import sample_ts

try:
    from nerfvs import _kernels_c as compiled
except ImportError:
    compiled = None


def make_mesh(rng, n_triangles):
    centers = rng.uniform(-0.9, 0.9, (n_triangles, 3))
    offs = rng.uniform(-0.08, 0.08, (n_triangles, 2, 3))
    verts = np.concatenate(
        [centers, centers + offs[:, 0], centers + offs[:, 1]], axis=0)
    tris = np.stack([np.arange(n_triangles),
                     np.arange(n_triangles) + n_triangles,
                     np.arange(n_triangles) + 2 * n_triangles], axis=1)
    return TriangleMesh(vertices=verts, triangles=tris.astype(np.int32))


def timeit(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--triangles", type=int, default=2000)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if compiled is None:
        raise SystemExit("compiled extension not built; nothing to compare")

    rng = np.random.default_rng(0)
    mesh = make_mesh(rng, args.triangles)
    bvh = build_bvh(mesh)
    v0, v1, v2 = (np.ascontiguousarray(a) for a in mesh.corners())
    origins = rng.uniform(-1, 1, (args.rays, 3))
    dirs = rng.normal(size=(args.rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ray_args = (bvh.bounds_min, bvh.bounds_max, bvh.left, bvh.right,
                bvh.start, bvh.count, bvh.tri_order, v0, v1, v2,
                origins, dirs, 0.0, np.inf, 1e-9)

    b, n = args.rays, args.samples
    sigmas = rng.uniform(0, 4, (b, n))
    ts, deltas = sample_ts(0.05, 2.5, n, n_rays=b, rng=rng)
    rgbs = rng.uniform(0, 1, (b, n, 3))
    ups = (rng.normal(size=(b, 3)), rng.normal(size=b), rng.normal(size=b),
           rng.normal(size=b), rng.normal(size=b))

    n_vertices, m, f = 65 ** 3, args.rays * args.samples, 16
    values = rng.normal(size=(n_vertices, f))
    idx = rng.integers(0, n_vertices, (m, 8))
    w = rng.uniform(0, 1, (m, 8))
    w /= w.sum(axis=1, keepdims=True)
    grad = rng.normal(size=(m, f))

    cases = [
        ("raycast", lambda k: k.raycast_rays(*ray_args)),
        ("composite fwd", lambda k: k.composite_forward(sigmas, rgbs, ts, deltas)),
        ("composite bwd",
         lambda k: k.composite_backward(sigmas, rgbs, ts, deltas, *ups)),
        ("trilinear gather", lambda k: k.trilinear_gather(values, idx, w)),
        ("trilinear scatter",
         lambda k: k.trilinear_scatter(grad, idx, w, n_vertices)),
    ]

    print(f"{args.rays} rays, {args.triangles} tris, {args.samples} samples, "
          f"best of {args.repeats}")
    print(f"{'kernel':<18} {'compiled':>10} {'numpy':>10} {'speedup':>8}")
    for name, fn in cases:
        tc = timeit(lambda: fn(compiled), args.repeats)
        tp = timeit(lambda: fn(numpy_backend), args.repeats)
        print(f"{name:<18} {tc * 1e3:>8.1f}ms {tp * 1e3:>8.1f}ms "
              f"{tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
