"""Per-ray training objectives and their gradients w.r.t. renderer outputs.

Total per-ray loss: photometric + lambda(r) * (lambda_d * depth +
lambda_w * weight_var + lambda_c * color_var), where lambda(r) boosts
regularization on rays whose surface point is covered by few training
views.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class LossWeights:
    beta: float = 0.1  # robust-loss knee
    alpha: float = 9.0  # coverage threshold
    lambda_max: float = 5.0
    lambda_d: float = 0.1
    lambda_w: float = 0.01
    lambda_c: float = 0.01
    depth_loss: str = "robust"  # "robust" or "l2" (ablation)

    def __post_init__(self):
        if self.beta <= 0:
            raise UsageError("beta must be positive")
        if self.alpha <= 1:
            raise UsageError("alpha must exceed 1")
        if self.lambda_max < 1:
            raise UsageError("lambda_max must be >= 1")
        if min(self.lambda_d, self.lambda_w, self.lambda_c) < 0:
            raise UsageError("loss weights must be nonnegative")
        if self.depth_loss not in ("robust", "l2"):
            raise UsageError("depth_loss must be 'robust' or 'l2'")


@dataclass(frozen=True)
class RaySupervision:
    gt_color: np.ndarray  # (B,3) in [0,1]
    prior_distance: np.ndarray  # (B,), nan where the scaffold ray missed
    coverage: np.ndarray  # (B,) integer >= 0


def photometric_loss(pred_color, gt_color):
    """Squared L2 over channels; returns (loss (B,), grad (B,3))."""
    pred_color = np.atleast_2d(np.asarray(pred_color, dtype=np.float64))
    gt_color = np.atleast_2d(np.asarray(gt_color, dtype=np.float64))
    diff = pred_color - gt_color
    return (diff * diff).sum(axis=-1), 2.0 * diff


def robust_depth_loss(pred_depth, prior_distance, beta):
    """Huber-log depth loss: quadratic inside the knee, logarithmic outside.

    loss = 0.5*d^2 for d < beta, else beta^2*(0.5 + ln(d/beta)); the
    gradient magnitude is d inside and beta^2/d outside, so it peaks at the
    knee and decays toward zero for both tiny and huge errors.
    Returns (loss, grad w.r.t. pred_depth), elementwise over arrays.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    prior = np.asarray(prior_distance, dtype=np.float64)
    diff = pred - prior
    d = np.abs(diff)
    quad = d < beta
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = np.where(quad, 0.5 * d * d,
                        beta * beta * (0.5 + np.log(np.maximum(d, beta) / beta)))
        mag = np.where(quad, d, beta * beta / np.maximum(d, beta))
    grad = np.sign(diff) * mag
    return loss, grad


def l2_depth_loss(pred_depth, prior_distance):
    """Plain quadratic depth loss (ablation stand-in for the robust loss)."""
    diff = np.asarray(pred_depth, dtype=np.float64) - np.asarray(prior_distance,
                                                                 dtype=np.float64)
    return 0.5 * diff * diff, diff


def coverage_weight(coverage, alpha, lambda_max):
    """Regularization multiplier: lambda_max at coverage 1, linearly down
    to 1 at coverage alpha, 1 above."""
    v = np.asarray(coverage, dtype=np.float64)
    lam = 1.0 + (lambda_max - 1.0) / (alpha - 1.0) * (alpha - v)
    return np.where(v > alpha, 1.0, np.maximum(lam, 1.0))


@dataclass(frozen=True)
class RayLossBreakdown:
    total: np.ndarray
    color: np.ndarray
    depth: np.ndarray  # unweighted robust/l2 term (0 where prior absent)
    weight_var: np.ndarray
    color_var: np.ndarray
    lam: np.ndarray


def total_ray_loss(result, sup, w, regularizers_enabled=True):
    """Per-ray total loss and gradients w.r.t. the renderer outputs.

    Rays without a depth prior skip the depth term; their lambda uses
    coverage clamped to 1 (strongest regularization). During the relaxing
    stage (regularizers_enabled False) only the photometric term remains.

    Returns (RayLossBreakdown, grads) with grads = dict of gradients w.r.t.
    color, depth, weight_var, color_var.
    """
    l_color, g_color = photometric_loss(result.color, sup.gt_color)
    b = len(l_color)
    has_prior = np.isfinite(sup.prior_distance)
    lam = coverage_weight(np.maximum(sup.coverage, 1), w.alpha, w.lambda_max)

    l_depth = np.zeros(b)
    g_depth = np.zeros(b)
    if np.any(has_prior):
        prior = np.where(has_prior, sup.prior_distance, 0.0)
        if w.depth_loss == "robust":
            ld, gd = robust_depth_loss(result.depth, prior, w.beta)
        else:
            ld, gd = l2_depth_loss(result.depth, prior)
        l_depth = np.where(has_prior, ld, 0.0)
        g_depth = np.where(has_prior, gd, 0.0)

    if regularizers_enabled:
        total = l_color + lam * (
            w.lambda_d * l_depth + w.lambda_w * result.weight_var
            + w.lambda_c * result.color_var
        )
        grads = {
            "color": g_color,
            "depth": lam * w.lambda_d * g_depth,
            "weight_var": lam * w.lambda_w,
            "color_var": lam * w.lambda_c,
        }
    else:
        total = l_color
        grads = {
            "color": g_color,
            "depth": np.zeros(b),
            "weight_var": np.zeros(b),
            "color_var": np.zeros(b),
        }
    breakdown = RayLossBreakdown(
        total=total, color=l_color, depth=l_depth,
        weight_var=np.asarray(result.weight_var, dtype=np.float64),
        color_var=np.asarray(result.color_var, dtype=np.float64), lam=lam,
    )
    return breakdown, grads
