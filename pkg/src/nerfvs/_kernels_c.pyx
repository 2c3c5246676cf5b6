# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: BVH raycast, transmittance compositing (forward and
backward), and trilinear gather/scatter. Mirrors nerfvs.kernels.numpy_backend
operation for operation."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()

BACKEND_NAME = "compiled"

DEF MT_DET_EPS = 1e-12
DEF STACK_CAP = 128


cdef inline double _dmin(double a, double b) nogil:
    return a if a < b else b


cdef inline double _dmax(double a, double b) nogil:
    return a if a > b else b


def raycast_rays(double[:, ::1] bounds_min, double[:, ::1] bounds_max,
                 int[::1] left, int[::1] right, int[::1] start, int[::1] count,
                 int[::1] tri_order,
                 double[:, ::1] v0, double[:, ::1] v1, double[:, ::1] v2,
                 double[:, ::1] origins, double[:, ::1] dirs,
                 double t_near, double t_far, double eps):
    cdef Py_ssize_t n_rays = origins.shape[0]
    out_t_arr = np.full(n_rays, np.inf)
    out_id_arr = np.full(n_rays, -1, dtype=np.int32)
    cdef double[::1] out_t = out_t_arr
    cdef int[::1] out_id = out_id_arr

    cdef int stack[STACK_CAP]
    cdef int sp, node, k, tri, s, c
    cdef Py_ssize_t r
    cdef double ox, oy, oz, dx, dy, dz, ix, iy, iz
    cdef double t0, t1, tmin, tmax, tmp
    cdef double best_t, t, lo
    cdef int best_id
    cdef double e1x, e1y, e1z, e2x, e2y, e2z
    cdef double px, py, pz, det, inv_det, tx, ty, tz, u, v, qx, qy, qz

    lo = _dmax(t_near, eps)
    for r in range(n_rays):
        ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
        dx = dirs[r, 0]; dy = dirs[r, 1]; dz = dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else INFINITY
        iy = 1.0 / dy if dy != 0.0 else INFINITY
        iz = 1.0 / dz if dz != 0.0 else INFINITY
        best_t = INFINITY
        best_id = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            # slab test against [lo, min(t_far, best_t)]
            t0 = (bounds_min[node, 0] - ox) * ix
            t1 = (bounds_max[node, 0] - ox) * ix
            tmin = _dmin(t0, t1); tmax = _dmax(t0, t1)
            t0 = (bounds_min[node, 1] - oy) * iy
            t1 = (bounds_max[node, 1] - oy) * iy
            tmin = _dmax(tmin, _dmin(t0, t1)); tmax = _dmin(tmax, _dmax(t0, t1))
            t0 = (bounds_min[node, 2] - oz) * iz
            t1 = (bounds_max[node, 2] - oz) * iz
            tmin = _dmax(tmin, _dmin(t0, t1)); tmax = _dmin(tmax, _dmax(t0, t1))
            if tmax < _dmax(tmin, lo) or tmin > _dmin(t_far, best_t):
                continue
            c = count[node]
            if c > 0:
                s = start[node]
                for k in range(s, s + c):
                    tri = tri_order[k]
                    e1x = v1[tri, 0] - v0[tri, 0]
                    e1y = v1[tri, 1] - v0[tri, 1]
                    e1z = v1[tri, 2] - v0[tri, 2]
                    e2x = v2[tri, 0] - v0[tri, 0]
                    e2y = v2[tri, 1] - v0[tri, 1]
                    e2z = v2[tri, 2] - v0[tri, 2]
                    px = dy * e2z - dz * e2y
                    py = dz * e2x - dx * e2z
                    pz = dx * e2y - dy * e2x
                    det = e1x * px + e1y * py + e1z * pz
                    if fabs(det) < MT_DET_EPS:
                        continue
                    inv_det = 1.0 / det
                    tx = ox - v0[tri, 0]
                    ty = oy - v0[tri, 1]
                    tz = oz - v0[tri, 2]
                    u = (tx * px + ty * py + tz * pz) * inv_det
                    if u < 0.0 or u > 1.0:
                        continue
                    qx = ty * e1z - tz * e1y
                    qy = tz * e1x - tx * e1z
                    qz = tx * e1y - ty * e1x
                    v = (dx * qx + dy * qy + dz * qz) * inv_det
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
                    if t < t_near or t > t_far or t <= eps:
                        continue
                    if t < best_t or (t == best_t and tri < best_id):
                        best_t = t
                        best_id = tri
            else:
                stack[sp] = right[node]; sp += 1
                stack[sp] = left[node]; sp += 1
        out_t[r] = best_t
        out_id[r] = best_id
    return out_t_arr, out_id_arr


def composite_forward(double[:, ::1] sigmas, double[:, :, ::1] rgbs,
                      double[:, ::1] ts, double[:, ::1] deltas):
    cdef Py_ssize_t b = sigmas.shape[0]
    cdef Py_ssize_t n = sigmas.shape[1]
    color_arr = np.zeros((b, 3))
    depth_arr = np.zeros(b)
    opacity_arr = np.zeros(b)
    weights_arr = np.zeros((b, n))
    wvar_arr = np.zeros(b)
    cvar_arr = np.zeros(b)
    cdef double[:, ::1] color = color_arr
    cdef double[::1] depth = depth_arr
    cdef double[::1] opacity = opacity_arr
    cdef double[:, ::1] weights = weights_arr
    cdef double[::1] wvar = wvar_arr
    cdef double[::1] cvar = cvar_arr
    cdef Py_ssize_t i, j
    cdef double acc, trans_in, trans, w, d0, d1, d2

    for i in range(b):
        acc = 0.0
        trans_in = 1.0
        for j in range(n):
            acc += sigmas[i, j] * deltas[i, j]
            trans = exp(-acc)
            w = trans_in - trans
            weights[i, j] = w
            opacity[i] += w
            depth[i] += w * ts[i, j]
            color[i, 0] += w * rgbs[i, j, 0]
            color[i, 1] += w * rgbs[i, j, 1]
            color[i, 2] += w * rgbs[i, j, 2]
            trans_in = trans
        for j in range(n):
            w = weights[i, j]
            d0 = ts[i, j] - depth[i]
            wvar[i] += w * d0 * d0
            d0 = rgbs[i, j, 0] - color[i, 0]
            d1 = rgbs[i, j, 1] - color[i, 1]
            d2 = rgbs[i, j, 2] - color[i, 2]
            cvar[i] += w * (d0 * d0 + d1 * d1 + d2 * d2)
    return color_arr, depth_arr, opacity_arr, weights_arr, wvar_arr, cvar_arr


def composite_backward(double[:, ::1] sigmas, double[:, :, ::1] rgbs,
                       double[:, ::1] ts, double[:, ::1] deltas,
                       double[:, ::1] g_color, double[::1] g_depth,
                       double[::1] g_opacity, double[::1] g_wvar,
                       double[::1] g_cvar):
    cdef Py_ssize_t b = sigmas.shape[0]
    cdef Py_ssize_t n = sigmas.shape[1]
    grad_sigma_arr = np.zeros((b, n))
    grad_rgb_arr = np.zeros((b, n, 3))
    cdef double[:, ::1] grad_sigma = grad_sigma_arr
    cdef double[:, :, ::1] grad_rgb = grad_rgb_arr
    cdef double[::1] trans = np.empty(n)
    cdef double[::1] weights = np.empty(n)
    cdef double[::1] adj = np.empty(n)
    cdef Py_ssize_t i, j
    cdef double acc, trans_in, w, opacity, depth
    cdef double c0, c1, c2, leak, a, suffix, dt, d0, d1, d2, gc

    for i in range(b):
        acc = 0.0
        trans_in = 1.0
        opacity = 0.0
        depth = 0.0
        c0 = c1 = c2 = 0.0
        for j in range(n):
            acc += sigmas[i, j] * deltas[i, j]
            trans[j] = exp(-acc)
            w = trans_in - trans[j]
            weights[j] = w
            opacity += w
            depth += w * ts[i, j]
            c0 += w * rgbs[i, j, 0]
            c1 += w * rgbs[i, j, 1]
            c2 += w * rgbs[i, j, 2]
            trans_in = trans[j]
        leak = 1.0 - opacity
        for j in range(n):
            dt = ts[i, j] - depth
            adj[j] = (g_color[i, 0] * rgbs[i, j, 0]
                      + g_color[i, 1] * rgbs[i, j, 1]
                      + g_color[i, 2] * rgbs[i, j, 2]
                      + g_depth[i] * ts[i, j]
                      + g_opacity[i]
                      + g_wvar[i] * (dt * dt - 2.0 * leak * depth * ts[i, j])
                      - 2.0 * g_cvar[i] * leak * (rgbs[i, j, 0] * c0
                                                  + rgbs[i, j, 1] * c1
                                                  + rgbs[i, j, 2] * c2))
            d0 = rgbs[i, j, 0] - c0
            d1 = rgbs[i, j, 1] - c1
            d2 = rgbs[i, j, 2] - c2
            w = weights[j]
            gc = 2.0 * g_cvar[i]
            grad_rgb[i, j, 0] = w * (g_color[i, 0] + gc * (d0 - leak * c0))
            grad_rgb[i, j, 1] = w * (g_color[i, 1] + gc * (d1 - leak * c1))
            grad_rgb[i, j, 2] = w * (g_color[i, 2] + gc * (d2 - leak * c2))
        suffix = 0.0
        for j in range(n - 1, -1, -1):
            grad_sigma[i, j] = deltas[i, j] * (adj[j] * trans[j] - suffix)
            suffix += adj[j] * weights[j]
    return grad_sigma_arr, grad_rgb_arr


def trilinear_gather(double[:, ::1] values, long[:, ::1] idx, double[:, ::1] w):
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t f = values.shape[1]
    out_arr = np.zeros((m, f))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef long vid
    cdef double wk
    for i in range(m):
        for k in range(8):
            vid = idx[i, k]
            wk = w[i, k]
            for j in range(f):
                out[i, j] += wk * values[vid, j]
    return out_arr


def trilinear_scatter(double[:, ::1] grad_out, long[:, ::1] idx,
                      double[:, ::1] w, Py_ssize_t n_vertices):
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t f = grad_out.shape[1]
    out_arr = np.zeros((n_vertices, f))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef long vid
    cdef double wk
    for i in range(m):
        for k in range(8):
            vid = idx[i, k]
            wk = w[i, k]
            for j in range(f):
                out[vid, j] += wk * grad_out[i, j]
    return out_arr
