"""Stratified ray sampling and differentiable transmittance compositing."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import UsageError
from .field import eval_field, eval_field_backward
from .geometry import camera_rays


@dataclass(frozen=True)
class RaySamples:
    ts: np.ndarray  # (B,n) ascending in [t_near, t_far]
    deltas: np.ndarray  # (B,n); delta_i = t_{i+1}-t_i, last = t_far - t_n
    points: np.ndarray  # (B,n,3)
    directions: np.ndarray  # (B,3)


@dataclass(frozen=True)
class RayRenderResult:
    color: np.ndarray  # (B,3)
    depth: np.ndarray  # (B,)
    opacity: np.ndarray  # (B,)
    weights: np.ndarray  # (B,n)
    weight_var: np.ndarray  # (B,)
    color_var: np.ndarray  # (B,)


def sample_ts(t_near, t_far, n_samples, n_rays=1, rng=None):
    """Sample positions in n equal bins of [t_near, t_far].

    Deterministic mode (rng None) takes bin midpoints; training mode draws
    uniformly within each bin. Returns (ts (B,n), deltas (B,n)).
    """
    if n_samples < 2:
        raise UsageError("need at least 2 samples per ray")
    edges = np.linspace(t_near, t_far, n_samples + 1)
    lo, hi = edges[:-1], edges[1:]
    if rng is None:
        ts = np.broadcast_to((lo + hi) / 2.0, (n_rays, n_samples)).copy()
    else:
        u = rng.random((n_rays, n_samples))
        ts = lo + u * (hi - lo)
    deltas = np.empty_like(ts)
    deltas[:, :-1] = np.diff(ts, axis=1)
    deltas[:, -1] = t_far - ts[:, -1]
    return ts, deltas


def sample_ray(origin, direction, t_near, t_far, n_samples, rng=None):
    """Single-ray stratified sampling; returns a RaySamples."""
    ts, deltas = sample_ts(t_near, t_far, n_samples, n_rays=1, rng=rng)
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    points = origin[None, None, :] + ts[:, :, None] * direction[None, None, :]
    return RaySamples(ts=ts, deltas=deltas, points=points,
                      directions=direction[None, :])


def composite(sigmas, rgbs, ts, deltas):
    """Quadrature of color/depth/opacity plus weight and color variance.

    Batched: sigmas/ts/deltas (B,n), rgbs (B,n,3). The color variance uses
    stop-gradient weights; that convention lives in composite_backward.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if np.any(sigmas < 0.0) or np.any(deltas <= 0.0):
        raise UsageError("composite requires sigma >= 0 and delta > 0")
    color, depth, opacity, weights, weight_var, color_var = kernels.composite_forward(
        sigmas, np.asarray(rgbs, dtype=np.float64), np.asarray(ts, dtype=np.float64),
        deltas,
    )
    return RayRenderResult(color=color, depth=depth, opacity=opacity,
                           weights=weights, weight_var=weight_var,
                           color_var=color_var)


def composite_backward(sigmas, rgbs, ts, deltas, g_color, g_depth, g_opacity,
                       g_wvar, g_cvar):
    """Gradients of the five composited outputs w.r.t. per-sample sigma/rgb."""
    return kernels.composite_backward(sigmas, rgbs, ts, deltas, g_color,
                                      g_depth, g_opacity, g_wvar, g_cvar)


def render_rays(grid, origins, dirs, t_near, t_far, n_samples, rng=None):
    """Full forward pass: sample, evaluate the field, composite.

    Returns (RayRenderResult, cache) where cache feeds render_rays_backward.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = len(origins)
    ts, deltas = sample_ts(t_near, t_far, n_samples, n_rays=n_rays, rng=rng)
    points = origins[:, None, :] + ts[:, :, None] * dirs[:, None, :]
    flat_pts = points.reshape(-1, 3)
    flat_dirs = np.repeat(dirs, n_samples, axis=0)
    sigma, rgb, field_cache = eval_field(grid, flat_pts, flat_dirs)
    sigmas = sigma.reshape(n_rays, n_samples)
    rgbs = rgb.reshape(n_rays, n_samples, 3)
    result = composite(sigmas, rgbs, ts, deltas)
    cache = (sigmas, rgbs, ts, deltas, field_cache)
    return result, cache


def render_rays_backward(grid, cache, g_color, g_depth=None, g_opacity=None,
                         g_wvar=None, g_cvar=None):
    """Backprop upstream output-gradients into a parameter gradient matrix."""
    sigmas, rgbs, ts, deltas, field_cache = cache
    b = len(sigmas)
    zeros = np.zeros(b)
    g_depth = zeros if g_depth is None else g_depth
    g_opacity = zeros if g_opacity is None else g_opacity
    g_wvar = zeros if g_wvar is None else g_wvar
    g_cvar = zeros if g_cvar is None else g_cvar
    grad_sigma, grad_rgb = kernels.composite_backward(
        sigmas, rgbs, ts, deltas, g_color, g_depth, g_opacity, g_wvar, g_cvar
    )
    return eval_field_backward(grid, field_cache,
                               grad_sigma.ravel(), grad_rgb.reshape(-1, 3))


def render_image(grid, camera, t_near, t_far, n_samples, batch_rays=16384):
    """Deterministic midpoint-sampled render; returns (image HxWx3, depth HxW)."""
    origins, dirs = camera_rays(camera)
    n = len(origins)
    color = np.empty((n, 3))
    depth = np.empty(n)
    for lo in range(0, n, batch_rays):
        hi = min(lo + batch_rays, n)
        res, _ = render_rays(grid, origins[lo:hi], dirs[lo:hi], t_near, t_far,
                             n_samples)
        color[lo:hi] = res.color
        depth[lo:hi] = res.depth
    h, w = camera.height, camera.width
    return color.reshape(h, w, 3), depth.reshape(h, w)
