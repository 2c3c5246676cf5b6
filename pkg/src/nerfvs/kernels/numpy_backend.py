"""Pure-numpy implementations of the hot kernels.

Numerically equivalent fallback for the compiled extension. The raycast
fallback is an exhaustive vectorized scan (the BVH arrays are accepted but
unused); the pure-Python BVH traversal lives in `nerfvs.bvh` and is only
fast enough for tests.
"""

import numpy as np

BACKEND_NAME = "python"


def raycast_rays(bounds_min, bounds_max, left, right, start, count, tri_order,
                 v0, v1, v2, origins, dirs, t_near, t_far, eps):
    """Batched nearest-hit raycast; returns (t (N,), tri_id (N,) int32)."""
    from ..geometry import TriangleMesh, intersect_rays_brute

    # rebuild a mesh view from the corner arrays; brute force ignores the BVH
    verts = np.concatenate([v0, v1, v2], axis=0)
    n = len(v0)
    tris = np.stack(
        [np.arange(n), np.arange(n) + n, np.arange(n) + 2 * n], axis=1
    ).astype(np.int32)
    mesh = TriangleMesh(vertices=verts, triangles=tris)
    return intersect_rays_brute(mesh, origins, dirs, t_near=t_near, t_far=t_far, eps=eps)


def composite_forward(sigmas, rgbs, ts, deltas):
    """Transmittance compositing over a batch of rays.

    sigmas/ts/deltas are (B,n), rgbs (B,n,3). Returns
    (color, depth, opacity, weights, weight_var, color_var).
    Weights are formed as telescoping transmittance differences so that
    sum(w) = 1 - exp(-sum(sigma*delta)) holds to rounding error.
    """
    tau = sigmas * deltas
    trans = np.exp(-np.cumsum(tau, axis=1))  # T after each sample
    trans_in = np.empty_like(trans)  # T entering each sample
    trans_in[:, 0] = 1.0
    trans_in[:, 1:] = trans[:, :-1]
    weights = trans_in - trans
    opacity = weights.sum(axis=1)
    color = np.einsum("bn,bnc->bc", weights, rgbs)
    depth = (weights * ts).sum(axis=1)
    weight_var = (weights * (ts - depth[:, None]) ** 2).sum(axis=1)
    diff = rgbs - color[:, None, :]
    color_var = (weights * (diff * diff).sum(axis=2)).sum(axis=1)
    return color, depth, opacity, weights, weight_var, color_var


def composite_backward(sigmas, rgbs, ts, deltas, g_color, g_depth, g_opacity,
                       g_wvar, g_cvar):
    """Analytic gradients of all five composited outputs w.r.t. sigma/rgb.

    The color-variance term treats the per-sample weights inside the sum as
    constants (stop-gradient); its sigma gradient flows only through the
    composited color inside the squared difference.
    """
    tau = sigmas * deltas
    trans = np.exp(-np.cumsum(tau, axis=1))
    trans_in = np.empty_like(trans)
    trans_in[:, 0] = 1.0
    trans_in[:, 1:] = trans[:, :-1]
    weights = trans_in - trans
    opacity = weights.sum(axis=1)
    color = np.einsum("bn,bnc->bc", weights, rgbs)
    depth = (weights * ts).sum(axis=1)

    leak = (1.0 - opacity)[:, None]  # residual transmittance factor
    # adjoint on each weight from color/depth/opacity/weight_var plus the
    # color path of color_var (weights under the stop-gradient contribute
    # nothing)
    adj = (
        np.einsum("bc,bnc->bn", g_color, rgbs)
        + g_depth[:, None] * ts
        + g_opacity[:, None]
        + g_wvar[:, None] * ((ts - depth[:, None]) ** 2 - 2.0 * leak * depth[:, None] * ts)
        - 2.0 * g_cvar[:, None] * leak * np.einsum("bnc,bc->bn", rgbs, color)
    )
    aw = adj * weights
    rev = np.cumsum(aw[:, ::-1], axis=1)[:, ::-1]
    suffix = rev - aw  # sum of adj*w over samples strictly after each index
    grad_sigma = deltas * (adj * trans - suffix)

    diff = rgbs - color[:, None, :]
    grad_rgb = weights[:, :, None] * (
        g_color[:, None, :]
        + 2.0 * g_cvar[:, None, None] * (diff - leak[:, :, None] * color[:, None, :])
    )
    return grad_sigma, grad_rgb


def trilinear_gather(values, idx, w):
    """Blend 8-corner features: values (V,F), idx (M,8), w (M,8) -> (M,F)."""
    return np.einsum("mk,mkf->mf", w, values[idx])


def trilinear_scatter(grad_out, idx, w, n_vertices):
    """Adjoint of trilinear_gather: accumulate (M,F) grads into (V,F)."""
    m, f = grad_out.shape
    vals = w[:, :, None] * grad_out[:, None, :]  # (M,8,F)
    flat = idx.ravel()
    out = np.empty((n_vertices, f), dtype=grad_out.dtype)
    for j in range(f):
        out[:, j] = np.bincount(flat, weights=vals[:, :, j].ravel(), minlength=n_vertices)
    return out
