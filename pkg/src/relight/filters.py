"""Plain-numpy image filtering used by the frozen feature extractors.

Nothing here carries gradients: these routines feed constant feature stacks
whose only trainable consumers are downstream projections. All hand-built
filters use reflect padding to avoid border ringing.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def correlate2d_reflect(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D cross-correlation with reflect padding; single-channel input."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(img, ((ph, ph), (pw, pw)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw))
    return np.einsum("hwij,ij->hw", win, kernel)


def gaussian_blur(img: np.ndarray, sigma: float, radius: int | None = None) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; 2-D input."""
    if radius is None:
        radius = max(1, int(round(2 * sigma)))
    k = gaussian_kernel1d(sigma, radius)
    out = correlate2d_reflect(img, k[None, :])
    return correlate2d_reflect(out, k[:, None])


def sobel_responses(lum: np.ndarray) -> np.ndarray:
    """Horizontal and vertical Sobel responses, stacked as 2 channels."""
    lum2 = lum[..., 0] if lum.ndim == 3 else lum
    gx = correlate2d_reflect(lum2, SOBEL_X)
    gy = correlate2d_reflect(lum2, SOBEL_Y)
    return np.stack([gx, gy], axis=-1)


def windowed_std(lum: np.ndarray, window: int = 5) -> np.ndarray:
    """Per-pixel standard deviation over a square window, reflect padding."""
    lum2 = lum[..., 0] if lum.ndim == 3 else lum
    box = np.full((window, window), 1.0 / (window * window))
    mean = correlate2d_reflect(lum2, box)
    mean_sq = correlate2d_reflect(lum2 * lum2, box)
    var = np.maximum(mean_sq - mean * mean, 0.0)
    return np.sqrt(var)[..., None]


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 average pooling of a 2-D image."""
    h, w = img.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample2: extents {h}x{w} not divisible by 2")
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def nearest_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of an H x W x C array to out_h x out_w."""
    h, w = img.shape[:2]
    rows = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    cols = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    return img[rows][:, cols]
