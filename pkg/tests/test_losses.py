"""Objective terms and image quality metrics against brute-force oracles."""

import math

import numpy as np
import pytest

from relight.errors import ShapeError
from relight.filters import gaussian_kernel1d
from relight.losses import (PSNR_INF, PerceptualProxy, combined_loss, l1_loss,
                            perceptual_proxy_loss, psnr, ssim)
from relight.modalities import ntsc_luminance
from relight.numerics import Tensor, backward
from tests.conftest import fd_grad, max_rel_err


class TestL1:
    def test_matches_loop_oracle(self, rng):
        a = rng.uniform(0, 1, size=(4, 5, 3))
        b = rng.uniform(0, 1, size=(4, 5, 3))
        got = float(l1_loss(a, b).data)
        total = 0.0
        for i in range(4):
            for j in range(5):
                for k in range(3):
                    total += abs(a[i, j, k] - b[i, j, k])
        assert got == pytest.approx(total / 60, abs=1e-14)

    def test_zero_on_identical(self, rng):
        a = rng.uniform(0, 1, size=(3, 3, 3))
        assert float(l1_loss(a, a).data) == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            l1_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestPerceptualProxy:
    def test_zero_on_identical_inputs(self, rng):
        proxy = PerceptualProxy(seed=7)
        img = rng.uniform(0, 1, size=(16, 16, 3))
        assert float(proxy(img, img).data) == pytest.approx(0.0, abs=1e-15)

    def test_symmetric_and_positive(self, rng):
        proxy = PerceptualProxy(seed=7)
        for _ in range(5):
            a = rng.uniform(0, 1, size=(16, 16, 3))
            b = rng.uniform(0, 1, size=(16, 16, 3))
            ab = float(proxy(a, b).data)
            ba = float(proxy(b, a).data)
            assert ab > 0.0
            assert ab == pytest.approx(ba, rel=1e-12)

    def test_deterministic_per_seed(self, rng):
        a = rng.uniform(0, 1, size=(16, 16, 3))
        b = rng.uniform(0, 1, size=(16, 16, 3))
        v1 = float(PerceptualProxy(seed=7)(a, b).data)
        v2 = float(PerceptualProxy(seed=7)(a, b).data)
        v3 = float(PerceptualProxy(seed=8)(a, b).data)
        assert v1 == v2
        assert v1 != v3

    def test_proxy_weights_are_frozen(self):
        proxy = PerceptualProxy()
        assert all(not p.tensor.requires_grad for p in proxy.parameters())

    def test_gradient_wrt_prediction_matches_fd(self, rng):
        proxy = PerceptualProxy(seed=3)
        gt = rng.uniform(0, 1, size=(8, 8, 3))
        x0 = rng.uniform(0.2, 0.8, size=(8, 8, 3))
        pred = Tensor(x0.copy(), requires_grad=True)
        loss = perceptual_proxy_loss(pred, gt, proxy)
        backward(loss)

        def f(x):
            from relight.numerics import no_grad
            with no_grad():
                return float(proxy(x, gt).data)

        numeric = fd_grad(f, x0, h=1e-5)
        assert max_rel_err(pred.grad, numeric) < 1e-5


class TestCombined:
    def test_zero_weight_reduces_to_l1(self, rng):
        proxy = PerceptualProxy()
        a = rng.uniform(0, 1, size=(16, 16, 3))
        b = rng.uniform(0, 1, size=(16, 16, 3))
        report = combined_loss(a, b, proxy, lambda_per=0.0)
        assert report.total == pytest.approx(float(l1_loss(a, b).data),
                                             abs=1e-15)

    def test_default_weight_invariant(self, rng):
        proxy = PerceptualProxy()
        a = rng.uniform(0, 1, size=(16, 16, 3))
        b = rng.uniform(0, 1, size=(16, 16, 3))
        report = combined_loss(a, b, proxy)
        assert report.lambda_per == 0.5
        assert report.total == pytest.approx(
            report.l1 + 0.5 * report.perceptual, abs=1e-12)
        assert float(report.total_tensor.data) == report.total

    def test_gradient_through_full_objective(self, rng):
        proxy = PerceptualProxy(seed=5)
        gt = rng.uniform(0, 1, size=(8, 8, 3))
        x0 = rng.uniform(0.2, 0.8, size=(8, 8, 3))
        pred = Tensor(x0.copy(), requires_grad=True)
        backward(combined_loss(pred, gt, proxy).total_tensor)

        def f(x):
            from relight.numerics import no_grad
            with no_grad():
                return combined_loss(Tensor(x), gt, proxy).total

        numeric = fd_grad(f, x0, h=1e-5)
        assert max_rel_err(pred.grad, numeric) < 1e-4


class TestPsnr:
    def test_known_value_for_uniform_error(self):
        gt = np.zeros((8, 8, 3))
        pred = np.full((8, 8, 3), 0.1)
        # MSE = 0.01 => 10 log10(1/0.01) = 20 dB
        assert psnr(pred, gt) == pytest.approx(20.0, abs=1e-12)

    def test_matches_formula_oracle(self, rng):
        a = rng.uniform(0, 1, size=(8, 8, 3))
        b = rng.uniform(0, 1, size=(8, 8, 3))
        mse = np.mean((a - b) ** 2)
        assert psnr(a, b) == pytest.approx(10 * math.log10(1 / mse), abs=1e-9)

    def test_identical_images_hit_the_sentinel(self, rng):
        a = rng.uniform(0, 1, size=(4, 4, 3))
        assert psnr(a, a) == PSNR_INF
        assert math.isinf(psnr(a, a))

    def test_monotone_in_error_magnitude(self):
        gt = np.zeros((8, 8, 3))
        values = [psnr(np.full((8, 8, 3), e), gt) for e in (0.01, 0.05, 0.1)]
        assert values[0] > values[1] > values[2]

    def test_peak_scaling(self, rng):
        a = rng.uniform(0, 1, size=(8, 8, 3))
        b = rng.uniform(0, 1, size=(8, 8, 3))
        assert psnr(a * 255, b * 255, peak=255.0) == pytest.approx(
            psnr(a, b), abs=1e-9)


def _ssim_oracle(a, b):
    """Per-window loop evaluation of mean SSIM on grayscale images."""
    k = gaussian_kernel1d(1.5, 5)
    win = np.outer(k, k)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa = a[i:i + 11, j:j + 11]
            pb = b[i:i + 11, j:j + 11]
            mu_a = (win * pa).sum()
            mu_b = (win * pb).sum()
            var_a = (win * pa * pa).sum() - mu_a ** 2
            var_b = (win * pb * pb).sum() - mu_b ** 2
            cov = (win * pa * pb).sum() - mu_a * mu_b
            num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
            vals.append(num / den)
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        a = rng.uniform(0, 1, size=(16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_inverted_image_scores_negative(self, rng):
        a = rng.uniform(0, 1, size=(16, 16, 3))
        assert ssim(a, 1.0 - a) < 0.0

    def test_matches_per_window_loop_oracle(self, rng):
        a = rng.uniform(0, 1, size=(14, 15))
        b = rng.uniform(0, 1, size=(14, 15))
        assert ssim(a, b) == pytest.approx(_ssim_oracle(a, b), abs=1e-7)

    def test_color_input_reduces_to_grayscale(self, rng):
        a = rng.uniform(0, 1, size=(16, 16, 3))
        b = rng.uniform(0, 1, size=(16, 16, 3))
        ga = ntsc_luminance(a)[..., 0]
        gb = ntsc_luminance(b)[..., 0]
        assert ssim(a, b) == pytest.approx(ssim(ga, gb), abs=1e-12)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, size=(16, 16, 3))
        b = rng.uniform(0, 1, size=(16, 16, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small_image_rejected(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))
