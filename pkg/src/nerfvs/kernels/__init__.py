"""Hot-kernel backend selection.

The compiled Cython extension (`nerfvs._kernels_c`) is preferred when it
was built; otherwise the vectorized numpy fallback is used. Set
NERFVS_KERNELS=python or NERFVS_KERNELS=compiled to force a backend.
"""

import os

import numpy as np

from ..errors import UsageError
from ..geometry import RAY_EPS
from . import numpy_backend

_requested = os.environ.get("NERFVS_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise UsageError(f"NERFVS_KERNELS must be auto|compiled|python, got {_requested!r}")

_impl = None
if _requested in ("auto", "compiled"):
    try:
        from .. import _kernels_c as _impl
    except ImportError:
        if _requested == "compiled":
            raise
if _impl is None:
    _impl = numpy_backend

BACKEND = _impl.BACKEND_NAME


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def raycast_rays(bvh, mesh, origins, dirs, t_near=0.0, t_far=np.inf, eps=RAY_EPS):
    """Nearest-hit raycast of many rays; (t, tri_id), misses (inf, -1)."""
    v0, v1, v2 = mesh.corners()
    return _impl.raycast_rays(
        _f64(bvh.bounds_min), _f64(bvh.bounds_max),
        bvh.left, bvh.right, bvh.start, bvh.count, bvh.tri_order,
        _f64(v0), _f64(v1), _f64(v2),
        _f64(origins), _f64(dirs), float(t_near), float(t_far), float(eps),
    )


def composite_forward(sigmas, rgbs, ts, deltas):
    return _impl.composite_forward(_f64(sigmas), _f64(rgbs), _f64(ts), _f64(deltas))


def composite_backward(sigmas, rgbs, ts, deltas, g_color, g_depth, g_opacity,
                       g_wvar, g_cvar):
    return _impl.composite_backward(
        _f64(sigmas), _f64(rgbs), _f64(ts), _f64(deltas),
        _f64(g_color), _f64(g_depth), _f64(g_opacity), _f64(g_wvar), _f64(g_cvar),
    )


def trilinear_gather(values, idx, w):
    return _impl.trilinear_gather(
        _f64(values), np.ascontiguousarray(idx, dtype=np.int64), _f64(w)
    )


def trilinear_scatter(grad_out, idx, w, n_vertices):
    return _impl.trilinear_scatter(
        _f64(grad_out), np.ascontiguousarray(idx, dtype=np.int64), _f64(w),
        int(n_vertices),
    )
