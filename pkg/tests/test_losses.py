import numpy as np
import pytest

from nerfvs.errors import UsageError
from nerfvs.losses import (
    LossWeights,
    RaySupervision,
    coverage_weight,
    l2_depth_loss,
    photometric_loss,
    robust_depth_loss,
    total_ray_loss,
)
from nerfvs.renderer import RayRenderResult


class TestPhotometric:
    def test_zero_at_match(self):
        loss, grad = photometric_loss([[0.2, 0.4, 0.6]], [[0.2, 0.4, 0.6]])
        assert loss[0] == 0.0
        np.testing.assert_array_equal(grad, [[0, 0, 0]])

    def test_hand_value(self):
        loss, grad = photometric_loss([[1.0, 0.0, 0.5]], [[0.0, 0.0, 0.0]])
        assert loss[0] == pytest.approx(1.25)
        np.testing.assert_allclose(grad[0], [2.0, 0.0, 1.0])

    def test_gradient_fd(self, rng):
        pred = rng.uniform(0, 1, (10, 3))
        gt = rng.uniform(0, 1, (10, 3))
        _, grad = photometric_loss(pred, gt)
        eps = 1e-6
        for c in range(3):
            p1, p2 = pred.copy(), pred.copy()
            p1[:, c] += eps
            p2[:, c] -= eps
            fd = (photometric_loss(p1, gt)[0] - photometric_loss(p2, gt)[0]) / (2 * eps)
            np.testing.assert_allclose(grad[:, c], fd, rtol=1e-6, atol=1e-8)


class TestRobustDepth:
    BETA = 0.1

    def test_quadratic_region(self):
        loss, grad = robust_depth_loss(1.05, 1.0, self.BETA)
        assert loss == pytest.approx(0.5 * 0.05**2, abs=1e-15)
        assert grad == pytest.approx(0.05, abs=1e-15)

    def test_log_region_worked_example(self):
        # residual 0.2 with beta 0.1: 0.01 * (0.5 + ln 2)
        loss, grad = robust_depth_loss(1.2, 1.0, self.BETA)
        assert loss == pytest.approx(0.01 * (0.5 + np.log(2.0)), abs=1e-15)
        assert loss == pytest.approx(0.0119315, abs=5e-7)
        assert grad == pytest.approx(0.01 / 0.2, abs=1e-15)

    def test_c1_at_knee(self):
        eps = 1e-9
        lo, _ = robust_depth_loss(1.0 + self.BETA - eps, 1.0, self.BETA)
        hi, _ = robust_depth_loss(1.0 + self.BETA + eps, 1.0, self.BETA)
        assert abs(hi - lo) < 1e-8
        _, g_lo = robust_depth_loss(1.0 + self.BETA - eps, 1.0, self.BETA)
        _, g_hi = robust_depth_loss(1.0 + self.BETA + eps, 1.0, self.BETA)
        assert abs(g_hi - g_lo) < 1e-7

    def test_symmetric_and_signed_gradient(self):
        l_pos, g_pos = robust_depth_loss(1.3, 1.0, self.BETA)
        l_neg, g_neg = robust_depth_loss(0.7, 1.0, self.BETA)
        assert l_pos == l_neg
        assert g_pos == -g_neg

    def test_gradient_magnitude_peaks_at_knee(self):
        ds = np.linspace(1e-4, 1.0, 400)
        _, grads = robust_depth_loss(1.0 + ds, 1.0, self.BETA)
        assert np.max(np.abs(grads)) == pytest.approx(self.BETA, abs=1e-3)
        assert np.all(np.abs(grads) <= self.BETA + 1e-12)

    def test_bounded_by_quadratic(self, rng):
        d = rng.uniform(0, 2, 500)
        loss, _ = robust_depth_loss(1.0 + d, 1.0, self.BETA)
        assert np.all(loss <= 0.5 * d * d + 1e-15)

    def test_gradient_fd(self, rng):
        pred = rng.uniform(0.5, 2.0, 100)
        prior = rng.uniform(0.5, 2.0, 100)
        # keep residuals away from the non-differentiable origin
        keep = np.abs(pred - prior) > 1e-3
        pred, prior = pred[keep], prior[keep]
        _, grad = robust_depth_loss(pred, prior, self.BETA)
        eps = 1e-7
        fd = (robust_depth_loss(pred + eps, prior, self.BETA)[0]
              - robust_depth_loss(pred - eps, prior, self.BETA)[0]) / (2 * eps)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)

    def test_l2_variant(self):
        loss, grad = l2_depth_loss(1.4, 1.0)
        assert loss == pytest.approx(0.08)
        assert grad == pytest.approx(0.4)


class TestCoverageWeight:
    def test_worked_examples(self):
        assert coverage_weight(1, 9.0, 5.0) == pytest.approx(5.0)
        assert coverage_weight(5, 9.0, 5.0) == pytest.approx(3.0)
        assert coverage_weight(9, 9.0, 5.0) == pytest.approx(1.0)

    def test_above_threshold_is_one(self):
        np.testing.assert_array_equal(
            coverage_weight(np.array([10, 20, 100]), 9.0, 5.0), [1, 1, 1])

    def test_monotone_decreasing(self):
        vals = coverage_weight(np.arange(1, 15), 9.0, 5.0)
        assert np.all(np.diff(vals) <= 0)
        assert np.all(vals >= 1.0)

    def test_disabled_when_lambda_max_one(self):
        np.testing.assert_array_equal(
            coverage_weight(np.arange(1, 12), 9.0, 1.0), np.ones(11))


def make_result(b, rng):
    color = rng.uniform(0, 1, (b, 3))
    return RayRenderResult(
        color=color, depth=rng.uniform(0.5, 2.5, b),
        opacity=rng.uniform(0.5, 1, b), weights=np.zeros((b, 4)),
        weight_var=rng.uniform(0, 0.3, b), color_var=rng.uniform(0, 0.3, b),
    )


class TestTotalRayLoss:
    def test_additive_decomposition(self, rng):
        b = 64
        res = make_result(b, rng)
        sup = RaySupervision(
            gt_color=rng.uniform(0, 1, (b, 3)),
            prior_distance=rng.uniform(0.5, 2.5, b),
            coverage=rng.integers(1, 12, b),
        )
        w = LossWeights()
        bd, _ = total_ray_loss(res, sup, w)
        expected = bd.color + bd.lam * (
            w.lambda_d * bd.depth + w.lambda_w * bd.weight_var
            + w.lambda_c * bd.color_var)
        np.testing.assert_allclose(bd.total, expected, atol=1e-12)

    def test_missing_prior_drops_depth_term(self, rng):
        res = make_result(2, rng)
        sup = RaySupervision(
            gt_color=rng.uniform(0, 1, (2, 3)),
            prior_distance=np.array([1.0, np.nan]),
            coverage=np.array([4, 4]),
        )
        bd, grads = total_ray_loss(res, sup, LossWeights())
        assert bd.depth[1] == 0.0
        assert grads["depth"][1] == 0.0
        assert bd.depth[0] > 0.0

    def test_zero_coverage_clamped_to_strongest(self, rng):
        res = make_result(1, rng)
        sup = RaySupervision(
            gt_color=rng.uniform(0, 1, (1, 3)),
            prior_distance=np.array([1.0]),
            coverage=np.array([0]),
        )
        bd, _ = total_ray_loss(res, sup, LossWeights())
        assert bd.lam[0] == pytest.approx(5.0)

    def test_relaxing_stage_photometric_only(self, rng):
        res = make_result(8, rng)
        sup = RaySupervision(
            gt_color=rng.uniform(0, 1, (8, 3)),
            prior_distance=rng.uniform(0.5, 2, 8),
            coverage=np.full(8, 2),
        )
        bd, grads = total_ray_loss(res, sup, LossWeights(),
                                   regularizers_enabled=False)
        np.testing.assert_array_equal(bd.total, bd.color)
        assert np.all(grads["depth"] == 0)
        assert np.all(grads["weight_var"] == 0)
        assert np.all(grads["color_var"] == 0)

    def test_gradients_match_fd(self, rng):
        b = 16
        res = make_result(b, rng)
        sup = RaySupervision(
            gt_color=rng.uniform(0, 1, (b, 3)),
            prior_distance=rng.uniform(0.5, 2.5, b),
            coverage=rng.integers(1, 12, b),
        )
        w = LossWeights()
        _, grads = total_ray_loss(res, sup, w)
        eps = 1e-6

        def total(**over):
            from dataclasses import replace
            r = replace(res, **over)
            return total_ray_loss(r, sup, w)[0].total

        for c in range(3):
            col1, col2 = res.color.copy(), res.color.copy()
            col1[:, c] += eps
            col2[:, c] -= eps
            fd = (total(color=col1) - total(color=col2)) / (2 * eps)
            np.testing.assert_allclose(grads["color"][:, c], fd, rtol=1e-5, atol=1e-8)
        fd = (total(depth=res.depth + eps) - total(depth=res.depth - eps)) / (2 * eps)
        np.testing.assert_allclose(grads["depth"], fd, rtol=1e-4, atol=1e-8)
        fd = (total(weight_var=res.weight_var + eps)
              - total(weight_var=res.weight_var - eps)) / (2 * eps)
        np.testing.assert_allclose(grads["weight_var"], fd, rtol=1e-6, atol=1e-9)
        fd = (total(color_var=res.color_var + eps)
              - total(color_var=res.color_var - eps)) / (2 * eps)
        np.testing.assert_allclose(grads["color_var"], fd, rtol=1e-6, atol=1e-9)

    def test_l2_mode_switches_depth_term(self, rng):
        res = make_result(4, rng)
        sup = RaySupervision(
            gt_color=rng.uniform(0, 1, (4, 3)),
            prior_distance=res.depth + 0.5,  # big residual: modes differ
            coverage=np.full(4, 10),
        )
        bd_r, _ = total_ray_loss(res, sup, LossWeights(depth_loss="robust"))
        bd_l, _ = total_ray_loss(res, sup, LossWeights(depth_loss="l2"))
        np.testing.assert_allclose(bd_l.depth, 0.5 * 0.5**2)
        assert np.all(bd_r.depth < bd_l.depth)


class TestLossWeightsValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(UsageError):
            LossWeights(beta=0.0)
        with pytest.raises(UsageError):
            LossWeights(alpha=1.0)
        with pytest.raises(UsageError):
            LossWeights(lambda_max=0.5)
        with pytest.raises(UsageError):
            LossWeights(depth_loss="huber")
