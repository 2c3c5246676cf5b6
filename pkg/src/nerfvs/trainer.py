"""Ray-batched Adam training of the voxel grid with coverage-adjusted losses.

The last `relax_fraction` of iterations runs photometric-only (the
"relaxing" fine-tune); everything before it optimizes the full objective.
"""

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DataError, DivergenceError, UsageError
from .field import init_grid
from .geometry import pixels_to_rays
from .io import read_cameras, read_pfm, read_ppm
from .losses import LossWeights, RaySupervision, total_ray_loss
from .renderer import render_rays, render_rays_backward


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000
    batch_rays: int = 1024
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    n_samples_per_ray: int = 128
    relax_fraction: float = 0.10
    seed: int = 0
    grid_resolution: int = 64
    sh_degree: int = 1
    t_near: float = 0.05
    t_far: float = 3.5  # diameter of the [-1,1]^3 box, rounded up
    log_every: int = 100
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not 0.0 <= self.relax_fraction < 1.0:
            raise UsageError("relax_fraction must be in [0, 1)")
        if self.batch_rays < 1:
            raise UsageError("batch_rays must be >= 1")

    @property
    def relax_start(self):
        return self.iterations - int(round(self.iterations * self.relax_fraction))


def desk_preset(**overrides):
    """Desk-scale defaults: R=64 grid, 3000 iterations, 96 samples/ray."""
    cfg = TrainConfig(iterations=3000, n_samples_per_ray=96, grid_resolution=64)
    return replace(cfg, **overrides) if overrides else cfg


_LOSS_KEYS = {"beta", "alpha", "lambda_max", "lambda_d", "lambda_w", "lambda_c",
              "depth_loss"}


def parse_config(text):
    """Parse the `key = value` training-config format.

    Lines are `key = value`; blank lines and `#` comments are ignored.
    Keys are TrainConfig fields plus the LossWeights fields (beta, alpha,
    lambda_max, lambda_d, lambda_w, lambda_c, depth_loss).
    """
    int_fields = {"iterations", "batch_rays", "n_samples_per_ray", "seed",
                  "grid_resolution", "sh_degree", "log_every"}
    cfg_kwargs = {}
    loss_kwargs = {}
    valid = {f.name for f in fields(TrainConfig)} - {"loss_weights"}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _LOSS_KEYS:
            loss_kwargs[key] = value if key == "depth_loss" else float(value)
        elif key in valid:
            cfg_kwargs[key] = int(value) if key in int_fields else float(value)
        else:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
    return TrainConfig(loss_weights=LossWeights(**loss_kwargs), **cfg_kwargs)


def load_config(path):
    return parse_config(Path(path).read_text())


def config_to_dict(cfg):
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "loss_weights"}
    d.update({f.name: getattr(cfg.loss_weights, f.name) for f in fields(cfg.loss_weights)})
    return d


# ---------------------------------------------------------------------------
# Training dataset: cameras + gt colors + baked priors, flattened per pixel.

class RayDataset:
    """All training pixels of a baked dataset, indexable for batch sampling."""

    def __init__(self, cameras, images, distance_maps, coverage_maps):
        if not cameras:
            raise DataError("dataset has no training views")
        if not (len(cameras) == len(images) == len(distance_maps) == len(coverage_maps)):
            raise DataError("dataset arrays disagree on the number of views")
        self.cameras = list(cameras)
        self.images = [np.asarray(im, dtype=np.float64) for im in images]
        self.distance_maps = [np.asarray(d, dtype=np.float64) for d in distance_maps]
        self.coverage_maps = [np.asarray(c) for c in coverage_maps]
        self.pixels_per_view = [c.width * c.height for c in self.cameras]
        self.offsets = np.concatenate([[0], np.cumsum(self.pixels_per_view)])
        self.n_pixels = int(self.offsets[-1])

    @classmethod
    def load(cls, data_dir):
        data_dir = Path(data_dir)
        cameras = read_cameras(data_dir / "cameras_train.json")
        images, dmaps, cmaps = [], [], []
        for i in range(len(cameras)):
            images.append(read_ppm(data_dir / "gt" / "train" / f"{i}.ppm"))
            d = read_pfm(data_dir / "priors" / f"dist_{i}.pfm")
            dmaps.append(np.where(d > 1e29, np.inf, d))  # PFM miss sentinel
            cmaps.append(read_pfm(data_dir / "priors" / f"cov_{i}.pfm").astype(np.int32))
        return cls(cameras, images, dmaps, cmaps)

    def rays_for_indices(self, flat_idx):
        """Rays and supervision for global pixel indices (uniform sampling
        domain is [0, n_pixels))."""
        flat_idx = np.asarray(flat_idx)
        origins = np.empty((len(flat_idx), 3))
        dirs = np.empty((len(flat_idx), 3))
        gt = np.empty((len(flat_idx), 3))
        prior = np.empty(len(flat_idx))
        cov = np.empty(len(flat_idx), dtype=np.int32)
        view = np.searchsorted(self.offsets, flat_idx, side="right") - 1
        for v in np.unique(view):
            sel = view == v
            cam = self.cameras[v]
            local = flat_idx[sel] - self.offsets[v]
            py, px = np.divmod(local, cam.width)
            o, d = pixels_to_rays(cam, px + 0.5, py + 0.5)
            origins[sel] = o
            dirs[sel] = d
            gt[sel] = self.images[v][py, px]
            dist = self.distance_maps[v][py, px]
            prior[sel] = np.where(np.isfinite(dist), dist, np.nan)
            cov[sel] = self.coverage_maps[v][py, px]
        sup = RaySupervision(gt_color=gt, prior_distance=prior, coverage=cov)
        return origins, dirs, sup


def sample_batch(dataset, batch_rays, rng):
    """Uniform pixel sampling across all training views."""
    idx = rng.integers(0, dataset.n_pixels, size=batch_rays)
    return dataset.rays_for_indices(idx)


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    def __init__(self, shape):
        self.step = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Canonical bias-corrected Adam update, in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise UsageError("parameter/gradient/state shape mismatch")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# ---------------------------------------------------------------------------
# Training loop

LOG_COLUMNS = ["iter", "L_total", "L_color", "L_depth", "L_varw", "L_varc",
               "mean_lambda"]


def train(dataset, config, grid=None, log_path=None, progress=None):
    """Optimize a voxel grid on the dataset; returns (grid, log_rows).

    log_rows are dicts with LOG_COLUMNS keys, one per `log_every`
    iterations (and the final iteration). Raises DivergenceError if the
    photometric loss goes non-finite.
    """
    cfg = config
    if grid is None:
        grid = init_grid(cfg.grid_resolution, cfg.sh_degree, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(grid.params.shape)
    log_rows = []

    for it in range(cfg.iterations):
        regularized = it < cfg.relax_start
        origins, dirs, sup = sample_batch(dataset, cfg.batch_rays, rng)
        result, cache = render_rays(grid, origins, dirs, cfg.t_near, cfg.t_far,
                                    cfg.n_samples_per_ray, rng=rng)
        breakdown, grads = total_ray_loss(result, sup, cfg.loss_weights,
                                          regularizers_enabled=regularized)
        mean_color = float(breakdown.color.mean())
        if not math.isfinite(mean_color):
            raise DivergenceError(f"photometric loss became non-finite at iter {it}")

        inv_b = 1.0 / cfg.batch_rays
        grad_params = render_rays_backward(
            grid, cache,
            g_color=grads["color"] * inv_b,
            g_depth=grads["depth"] * inv_b,
            g_wvar=grads["weight_var"] * inv_b,
            g_cvar=grads["color_var"] * inv_b,
        )
        adam_step(grid.params, grad_params, state, cfg.learning_rate,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            lw = cfg.loss_weights
            if regularized:
                l_depth = float((breakdown.lam * lw.lambda_d * breakdown.depth).mean())
                l_varw = float((breakdown.lam * lw.lambda_w * breakdown.weight_var).mean())
                l_varc = float((breakdown.lam * lw.lambda_c * breakdown.color_var).mean())
            else:
                l_depth = l_varw = l_varc = 0.0
            row = {
                "iter": it,
                "L_total": float(breakdown.total.mean()),
                "L_color": mean_color,
                "L_depth": l_depth,
                "L_varw": l_varw,
                "L_varc": l_varc,
                "mean_lambda": float(breakdown.lam.mean()),
            }
            log_rows.append(row)
            if progress is not None:
                progress(row)

    if log_path is not None:
        write_log(log_path, log_rows)
    return grid, log_rows


def write_log(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
