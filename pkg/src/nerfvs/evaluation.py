"""Image/geometry metrics, split evaluation, and the ablation harness."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

PSNR_CAP = 99.0

COVERAGE_BINS = (("1-2", 1, 2), ("3-5", 3, 5), ("6-9", 6, 9), (">9", 10, np.inf))


def psnr(pred_image, gt_image):
    """-10*log10(MSE) with peak 1.0; identical images report the 99 dB cap."""
    pred = np.asarray(pred_image, dtype=np.float64)
    gt = np.asarray(gt_image, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DataError("PSNR inputs must share a shape")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * np.log10(mse), PSNR_CAP)


def _gaussian_kernel(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img, kernel):
    """Separable 2D filtering, 'valid' region only."""
    from scipy.signal import convolve

    tmp = convolve(img, kernel[None, :], mode="valid")
    return convolve(tmp, kernel[:, None], mode="valid")


def ssim(pred_image, gt_image, k1=0.01, k2=0.03, window=11, sigma=1.5):
    """Windowed SSIM on luminance (RGB mean), dynamic range 1.0.

    11x11 Gaussian window (sigma 1.5), mean over valid window positions.
    """
    pred = np.asarray(pred_image, dtype=np.float64)
    gt = np.asarray(gt_image, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DataError("SSIM inputs must share a shape")
    if pred.ndim == 3:
        pred = pred.mean(axis=2)
        gt = gt.mean(axis=2)
    if min(pred.shape) < window:
        raise DataError("image smaller than the SSIM window")
    kern = _gaussian_kernel(window, sigma)
    c1 = k1 * k1
    c2 = k2 * k2
    mu_p = _filter_valid(pred, kern)
    mu_g = _filter_valid(gt, kern)
    var_p = _filter_valid(pred * pred, kern) - mu_p * mu_p
    var_g = _filter_valid(gt * gt, kern) - mu_g * mu_g
    cov = _filter_valid(pred * gt, kern) - mu_p * mu_g
    num = (2.0 * mu_p * mu_g + c1) * (2.0 * cov + c2)
    den = (mu_p * mu_p + mu_g * mu_g + c1) * (var_p + var_g + c2)
    return float(np.mean(num / den))


def depth_error(pred_depthmap, gt_depthmap, mask):
    """RMSE and median absolute error over masked (gt-hit) pixels."""
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise DataError("depth_error: empty mask")
    diff = np.asarray(pred_depthmap, dtype=np.float64)[mask] - np.asarray(
        gt_depthmap, dtype=np.float64)[mask]
    rmse = float(np.sqrt(np.mean(diff * diff)))
    return rmse, float(np.median(np.abs(diff)))


def coverage_binned_psnr(pred_images, gt_images, coverage_maps):
    """PSNR per coverage bin over pooled pixels of all views.

    Pixels with coverage 0 (scaffold miss) are excluded. Empty bins are
    omitted. Returns {bin_label: psnr}.
    """
    sq_sum = {label: 0.0 for label, _, _ in COVERAGE_BINS}
    count = {label: 0 for label, _, _ in COVERAGE_BINS}
    for pred, gt, cov in zip(pred_images, gt_images, coverage_maps):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        cov = np.asarray(cov)
        err = ((pred - gt) ** 2).mean(axis=2)
        for label, lo, hi in COVERAGE_BINS:
            sel = (cov >= lo) & (cov <= hi)
            sq_sum[label] += float(err[sel].sum())
            count[label] += int(sel.sum())
    table = {}
    for label, _, _ in COVERAGE_BINS:
        if count[label] == 0:
            continue
        mse = sq_sum[label] / count[label]
        table[label] = PSNR_CAP if mse == 0.0 else min(-10.0 * np.log10(mse), PSNR_CAP)
    return table


@dataclass
class EvalReport:
    split: str
    per_view_psnr: list
    per_view_ssim: list
    per_view_depth_rmse: list
    per_view_depth_medae: list
    coverage_binned: dict

    @property
    def mean_psnr(self):
        return float(np.mean(self.per_view_psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.per_view_ssim))

    @property
    def mean_depth_rmse(self):
        return float(np.mean(self.per_view_depth_rmse))

    @property
    def mean_depth_medae(self):
        return float(np.mean(self.per_view_depth_medae))

    def to_dict(self):
        return {
            "split": self.split,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "mean_depth_rmse": self.mean_depth_rmse,
            "mean_depth_medae": self.mean_depth_medae,
            "per_view_psnr": self.per_view_psnr,
            "per_view_ssim": self.per_view_ssim,
            "per_view_depth_rmse": self.per_view_depth_rmse,
            "per_view_depth_medae": self.per_view_depth_medae,
            "coverage_binned_psnr": self.coverage_binned,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")


def evaluate_split(grid, data_dir, split, n_samples, t_near, t_far, threads=1):
    """Render every view of a split and score it against ground truth."""
    from concurrent.futures import ThreadPoolExecutor

    from .io import read_cameras, read_pfm, read_ppm
    from .renderer import render_image

    data_dir = Path(data_dir)
    cameras = read_cameras(data_dir / f"cameras_{split}.json")
    gt_images, gt_depths, cov_maps = [], [], []
    for i in range(len(cameras)):
        gt_images.append(read_ppm(data_dir / "gt" / split / f"{i}.ppm"))
        d = read_pfm(data_dir / "gt" / split / f"depth_{i}.pfm")
        gt_depths.append(np.where(d > 1e29, np.inf, d))
        cov_name = (f"cov_{i}.pfm" if split == "train" else f"cov_{split}_{i}.pfm")
        cov_path = data_dir / "priors" / cov_name
        cov_maps.append(read_pfm(cov_path).astype(np.int32) if cov_path.exists() else None)

    def render_one(cam):
        return render_image(grid, cam, t_near, t_far, n_samples)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rendered = list(pool.map(render_one, cameras))
    else:
        rendered = [render_one(c) for c in cameras]

    report = EvalReport(split=split, per_view_psnr=[], per_view_ssim=[],
                        per_view_depth_rmse=[], per_view_depth_medae=[],
                        coverage_binned={})
    preds = []
    for (image, depth), gt, gt_d in zip(rendered, gt_images, gt_depths):
        # quantize like the stored ground truth so metrics compare like with like
        image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
        preds.append(image)
        report.per_view_psnr.append(psnr(image, gt))
        report.per_view_ssim.append(ssim(image, gt))
        mask = np.isfinite(gt_d)
        rmse, medae = depth_error(depth, np.where(mask, gt_d, 0.0), mask)
        report.per_view_depth_rmse.append(rmse)
        report.per_view_depth_medae.append(medae)
    if all(c is not None for c in cov_maps):
        report.coverage_binned = coverage_binned_psnr(preds, gt_images, cov_maps)
    return report, rendered


# ---------------------------------------------------------------------------
# Ablation harness: four loss configurations compared on the same dataset.

ABLATION_MODES = ("full", "l2_depth", "no_variance", "no_adjustment")


def ablation_config(base_weights, mode):
    from dataclasses import replace

    if mode == "full":
        return base_weights
    if mode == "l2_depth":
        return replace(base_weights, depth_loss="l2")
    if mode == "no_variance":
        return replace(base_weights, lambda_w=0.0, lambda_c=0.0)
    if mode == "no_adjustment":
        # treat all areas as fully observed: lambda(r) == 1 everywhere
        return replace(base_weights, lambda_max=1.0)
    raise DataError(f"unknown ablation mode {mode!r}")


def run_ablation(data_dir, config, out_dir, splits=("extrap",), threads=1):
    """Train the four ablation variants and emit a comparison table.

    Writes ablation.csv / ablation.json plus per-mode renders as a
    side-by-side PPM grid per evaluated view.
    """
    from dataclasses import replace as cfg_replace

    from .io import write_ppm
    from .trainer import RayDataset, train

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = RayDataset.load(data_dir)
    rows = []
    renders = {}
    for mode in ABLATION_MODES:
        cfg = cfg_replace(config, loss_weights=ablation_config(config.loss_weights, mode))
        grid, _ = train(dataset, cfg)
        row = {"mode": mode}
        for split in splits:
            report, rendered = evaluate_split(
                grid, data_dir, split, cfg.n_samples_per_ray, cfg.t_near,
                cfg.t_far, threads=threads,
            )
            row[f"{split}_psnr"] = report.mean_psnr
            row[f"{split}_ssim"] = report.mean_ssim
            row[f"{split}_depth_rmse"] = report.mean_depth_rmse
            renders.setdefault(split, {})[mode] = [im for im, _ in rendered]
        rows.append(row)

    fieldnames = list(rows[0].keys())
    with open(out / "ablation.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "ablation.json", "w") as f:
        json.dump(rows, f, indent=1, sort_keys=True)
        f.write("\n")

    for split, by_mode in renders.items():
        n_views = len(next(iter(by_mode.values())))
        for i in range(n_views):
            grid_img = np.concatenate([by_mode[m][i] for m in ABLATION_MODES], axis=1)
            write_ppm(out / f"compare_{split}_{i}.ppm", grid_img)
    return rows
