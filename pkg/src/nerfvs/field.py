"""Dense trainable voxel radiance field over [-1,1]^3.

Each grid vertex stores one raw density plus 3*(L+1)^2 spherical-harmonic
color coefficients, all kept in a single (R^3, 1+3B) parameter matrix so the
optimizer and the trilinear kernels see one flat array. Density goes
through softplus, colors through sigmoid of the SH expansion.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, UsageError

CHECKPOINT_MAGIC = b"NFVS"
CHECKPOINT_VERSION = 1

# raw density such that softplus(raw) ~= 0.1
_INIT_RAW_DENSITY = float(np.log(np.expm1(0.1)))

_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
          1.0925484305920792, 0.5462742152960396)


def sh_basis_size(degree):
    return (degree + 1) ** 2


def sh_basis(dirs, degree):
    """Real spherical harmonics up to `degree` (<= 2) for unit directions."""
    dirs = np.asarray(dirs, dtype=np.float64)
    out = np.empty(dirs.shape[:-1] + (sh_basis_size(degree),), dtype=np.float64)
    out[..., 0] = _SH_C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = _SH_C1 * y
        out[..., 2] = _SH_C1 * z
        out[..., 3] = _SH_C1 * x
    if degree >= 2:
        out[..., 4] = _SH_C2[0] * x * y
        out[..., 5] = _SH_C2[1] * y * z
        out[..., 6] = _SH_C2[2] * (3.0 * z * z - 1.0)
        out[..., 7] = _SH_C2[3] * x * z
        out[..., 8] = _SH_C2[4] * (x * x - y * y)
    if degree > 2:
        raise UsageError("SH degree > 2 not supported")
    return out


@dataclass
class VoxelGrid:
    resolution: int
    sh_degree: int
    params: np.ndarray  # (R^3, 1 + 3B) float64

    @property
    def basis_size(self):
        return sh_basis_size(self.sh_degree)

    @property
    def n_vertices(self):
        return self.resolution ** 3

    @property
    def n_params(self):
        return self.params.size

    @property
    def raw_density(self):
        return self.params[:, 0]

    @property
    def sh_coeffs(self):
        return self.params[:, 1:].reshape(self.n_vertices, 3, self.basis_size)


def init_grid(resolution, sh_degree=1, seed=0):
    """Constant low-density start; DC color coefficients uniform in [-0.1, 0.1]."""
    if resolution < 2:
        raise UsageError("grid resolution must be >= 2")
    b = sh_basis_size(sh_degree)
    n = resolution ** 3
    params = np.zeros((n, 1 + 3 * b), dtype=np.float64)
    params[:, 0] = _INIT_RAW_DENSITY
    rng = np.random.default_rng(seed)
    dc = rng.uniform(-0.1, 0.1, size=(n, 3))
    params[:, 1 :: b] = dc  # DC slot of each channel
    return VoxelGrid(resolution=resolution, sh_degree=sh_degree, params=params)


def trilinear_weights(points, resolution):
    """Corner indices and blend weights for points in [-1,1]^3 (clamped).

    Returns (idx (M,8) int64 flat vertex ids, w (M,8)); weights are
    nonnegative and sum to 1.
    """
    r = resolution
    p = np.clip(np.asarray(points, dtype=np.float64), -1.0, 1.0)
    g = (p + 1.0) * 0.5 * (r - 1)
    i0 = np.clip(np.floor(g).astype(np.int64), 0, r - 2)
    f = g - i0  # in [0,1]
    wx = np.stack([1.0 - f[:, 0], f[:, 0]], axis=1)
    wy = np.stack([1.0 - f[:, 1], f[:, 1]], axis=1)
    wz = np.stack([1.0 - f[:, 2], f[:, 2]], axis=1)
    w = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]).reshape(-1, 8)
    base = (i0[:, 0] * r + i0[:, 1]) * r + i0[:, 2]
    offs = np.array(
        [(dx * r + dy) * r + dz for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
        dtype=np.int64,
    )
    idx = base[:, None] + offs[None, :]
    return idx, w


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def trilinear_sample(grid, points):
    """Raw (uninterpreted) feature vectors at points: (M, 1+3B)."""
    idx, w = trilinear_weights(points, grid.resolution)
    return kernels.trilinear_gather(grid.params, idx, w)


def eval_field(grid, points, dirs):
    """Density and view-dependent color at sample points.

    Returns (sigma (M,), rgb (M,3), cache) where cache feeds
    eval_field_backward.
    """
    idx, w = trilinear_weights(points, grid.resolution)
    feats = kernels.trilinear_gather(grid.params, idx, w)
    raw_sigma = feats[:, 0]
    sigma = softplus(raw_sigma)
    b = grid.basis_size
    sh = feats[:, 1:].reshape(-1, 3, b)
    basis = sh_basis(dirs, grid.sh_degree)
    logits = np.einsum("mcb,mb->mc", sh, basis)
    rgb = sigmoid(logits)
    cache = (idx, w, raw_sigma, rgb, basis)
    return sigma, rgb, cache


def eval_field_backward(grid, cache, grad_sigma, grad_rgb):
    """Scatter output gradients back into a (R^3, 1+3B) parameter gradient."""
    idx, w, raw_sigma, rgb, basis = cache
    b = grid.basis_size
    m = len(raw_sigma)
    grad_feats = np.empty((m, 1 + 3 * b), dtype=np.float64)
    grad_feats[:, 0] = grad_sigma * sigmoid(raw_sigma)  # d softplus
    grad_logits = grad_rgb * rgb * (1.0 - rgb)
    grad_feats[:, 1:] = (grad_logits[:, :, None] * basis[:, None, :]).reshape(m, 3 * b)
    return kernels.trilinear_scatter(grad_feats, idx, w, grid.n_vertices)


# ---------------------------------------------------------------------------
# Checkpoint: header (magic, version, R, L), raw_density, sh_coeffs as
# little-endian float32, plus a JSON sidecar of training metadata.

def save_checkpoint(path, grid, metadata=None):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<III", CHECKPOINT_VERSION, grid.resolution, grid.sh_degree))
        f.write(grid.raw_density.astype("<f4").tobytes())
        f.write(np.ascontiguousarray(grid.sh_coeffs).astype("<f4").tobytes())
    with open(str(path) + ".json", "w") as f:
        json.dump(metadata or {}, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        version, r, l = struct.unpack("<III", f.read(12))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        n = r ** 3
        b = sh_basis_size(l)
        dens = np.frombuffer(f.read(4 * n), dtype="<f4")
        sh = np.frombuffer(f.read(4 * n * 3 * b), dtype="<f4")
        if dens.size != n or sh.size != n * 3 * b:
            raise DataError(f"{path}: truncated checkpoint")
    params = np.empty((n, 1 + 3 * b), dtype=np.float64)
    params[:, 0] = dens
    params[:, 1:] = sh.reshape(n, 3 * b)
    return VoxelGrid(resolution=r, sh_degree=l, params=params)
