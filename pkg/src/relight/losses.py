"""Training objective and evaluation metrics.

The objective is mean-absolute error plus a weighted perceptual term
(default weight 0.5). The perceptual term measures feature distance in a
frozen, seeded 3-layer convolutional pyramid standing in for a pretrained
perceptual network; swap :class:`PerceptualProxy` if you have one.

PSNR/SSIM operate on plain float arrays in [0, 1]; no ground-truth mean
correction is ever applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .filters import gaussian_kernel1d
from .modalities import ntsc_luminance
from .numerics import Conv2d, Module, Tensor, no_grad, ops
from .numerics.tensor import as_tensor

PSNR_INF = math.inf

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class LossReport:
    l1: float
    perceptual: float
    lambda_per: float
    total: float
    total_tensor: Tensor   # graph-attached scalar for backprop


def l1_loss(pred, gt) -> Tensor:
    """Mean absolute error over all elements."""
    pred = as_tensor(pred)
    gt = as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"l1_loss: shapes differ, {pred.shape} vs {gt.shape}")
    return ops.mean_all(ops.abs_(ops.sub(pred, gt)))


class PerceptualProxy(Module):
    """Frozen random conv pyramid (16/32/64 channels, stride 2, tanh) whose
    multi-scale feature distance plays the perceptual-loss role."""

    CHANNELS = (16, 32, 64)

    def __init__(self, seed: int = 7):
        rng = np.random.default_rng(seed)
        self.seed = seed
        layers = []
        cin = 3
        for cout in self.CHANNELS:
            conv = Conv2d(3, 3, cin, cout, rng, stride=2, padding=1)
            conv.w.tensor.requires_grad = False
            conv.b.tensor.requires_grad = False
            layers.append(conv)
            cin = cout
        self.layers = layers

    def features(self, x: Tensor):
        feats = []
        cur = x
        for conv in self.layers:
            cur = ops.tanh(conv(cur))
            feats.append(cur)
        return feats

    def __call__(self, pred, gt) -> Tensor:
        pred = as_tensor(pred)
        with no_grad():
            gt_feats = [f.data for f in self.features(as_tensor(gt))]
        total = None
        for f, g in zip(self.features(pred), gt_feats):
            d = ops.sub(f, Tensor(g))
            term = ops.mean_all(ops.mul(d, d))
            total = term if total is None else ops.add(total, term)
        return total


def perceptual_proxy_loss(pred, gt, proxy: PerceptualProxy) -> Tensor:
    return proxy(pred, gt)


def combined_loss(pred, gt, proxy: PerceptualProxy,
                  lambda_per: float = 0.5) -> LossReport:
    l1 = l1_loss(pred, gt)
    per = proxy(pred, gt)
    total = ops.add(l1, ops.scale(per, lambda_per))
    return LossReport(l1=float(l1.data), perceptual=float(per.data),
                      lambda_per=lambda_per, total=float(total.data),
                      total_tensor=total)


# ---------------------------------------------------------------------------
# metrics (plain numpy)


def psnr(pred: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"psnr: shapes differ, {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_window() -> np.ndarray:
    k = gaussian_kernel1d(SSIM_SIGMA, SSIM_WINDOW // 2)
    return np.outer(k, k)


def ssim(pred: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows of the NTSC
    grayscale images."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"ssim: shapes differ, {pred.shape} vs {gt.shape}")
    a = ntsc_luminance(pred)[..., 0] if pred.ndim == 3 else pred
    b = ntsc_luminance(gt)[..., 0] if gt.ndim == 3 else gt
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _ssim_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def local(stat):
        v = np.lib.stride_tricks.sliding_window_view(stat, (SSIM_WINDOW, SSIM_WINDOW))
        return np.einsum("hwij,ij->hw", v, win)

    mu_a = local(a)
    mu_b = local(b)
    var_a = local(a * a) - mu_a * mu_a
    var_b = local(b * b) - mu_b * mu_b
    cov = local(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
