"""Auxiliary modality encoders and the pluggable registry.

Three modalities ship by default:

* ``luminance`` -- NTSC luminance enriched with Sobel edges, local contrast,
  and a 3-level Gaussian pyramid (7 raw channels).
* ``depth`` -- a procedural pseudo-depth stand-in: a wide Gaussian blur of
  the inverted luminance, contrast-normalized so it stays approximately
  invariant to global gamma darkening. Frozen.
* ``semantic`` -- a deterministic stand-in for a frozen semantic backbone:
  non-overlapping 4x4 patches pushed through a seeded random linear map to
  16 channels. Frozen.

Raw encoder outputs are constants with respect to the model; all gradient
flows through the trainable per-modality projection pyramid
(:class:`ModalityProjector`), which realizes the per-scale shape contract
(H/2^s, W/2^s, 2^s*C) for s in {0, 1, 2}.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from . import filters
from .errors import ConfigError, ShapeError
from .numerics import Conv2d, Down2, Module, Tensor
from .numerics.tensor import as_tensor

NTSC_WEIGHTS = np.array([0.299, 0.587, 0.114])

SCALES = (0, 1, 2)

# channel order of the raw luminance stack; fixed so checkpoints stay portable
LUMINANCE_STACK_CHANNELS = ("L", "sobel_x", "sobel_y", "contrast",
                            "pyr0", "pyr1", "pyr2")

PYRAMID_SIGMA = 1.0
PYRAMID_RADIUS = 2          # 5x5 kernel
DEPTH_BLUR_SIGMA = 4.0
SEMANTIC_PATCH = 4
SEMANTIC_DIM = 16

_CACHE_MAX = 256


def ntsc_luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ShapeError(f"ntsc_luminance expects HxWx3, got {img.shape}")
    return (img @ NTSC_WEIGHTS)[..., None]


def sobel_edges(lum: np.ndarray) -> np.ndarray:
    return filters.sobel_responses(lum)


def local_contrast(lum: np.ndarray, window: int = 5) -> np.ndarray:
    return filters.windowed_std(lum, window)


def luminance_pyramid(lum: np.ndarray, levels: int = 3) -> List[np.ndarray]:
    """Gaussian blur/downsample chain; every level is upsampled back to the
    input resolution for channel-stacking."""
    lum2 = lum[..., 0] if lum.ndim == 3 else lum
    h, w = lum2.shape
    if h % (2 ** (levels - 1)) or w % (2 ** (levels - 1)):
        raise ShapeError(f"luminance_pyramid: {h}x{w} not divisible by "
                         f"{2 ** (levels - 1)}")
    out = []
    cur = filters.gaussian_blur(lum2, PYRAMID_SIGMA, PYRAMID_RADIUS)
    out.append(cur)
    for _ in range(1, levels):
        cur = filters.downsample2(cur)
        cur = filters.gaussian_blur(cur, PYRAMID_SIGMA, PYRAMID_RADIUS)
        out.append(filters.nearest_resize(cur[..., None], h, w)[..., 0])
    return out


def luminance_stack(img: np.ndarray) -> np.ndarray:
    """The 7-channel raw luminance feature stack (see
    LUMINANCE_STACK_CHANNELS for the order)."""
    lum = ntsc_luminance(img)
    edges = sobel_edges(lum)
    contrast = local_contrast(lum)
    pyr = luminance_pyramid(lum)
    return np.concatenate([lum, edges, contrast,
                           np.stack(pyr, axis=-1)], axis=-1)


def depth_stub(img: np.ndarray) -> np.ndarray:
    """Procedural pseudo-depth: wide blur of inverted luminance, rescaled to
    [0, 1]. Deterministic, frozen, approximately gamma-invariant."""
    lum = ntsc_luminance(img)[..., 0]
    d = filters.gaussian_blur(1.0 - lum, DEPTH_BLUR_SIGMA)
    lo, hi = d.min(), d.max()
    if hi - lo < 1e-12:
        return np.zeros_like(d)[..., None]
    return ((d - lo) / (hi - lo))[..., None]


def _semantic_matrix(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    k = SEMANTIC_PATCH * SEMANTIC_PATCH * 3
    return rng.standard_normal((k, SEMANTIC_DIM)) / np.sqrt(k)


def semantic_stub(img: np.ndarray, seed: int = 1234) -> np.ndarray:
    """Patch-level stand-in for a frozen semantic backbone: 4x4 patches,
    seeded random linear projection to 16 channels."""
    img = np.asarray(img, dtype=np.float64)
    h, w, _ = img.shape
    p = SEMANTIC_PATCH
    if h % p or w % p:
        raise ShapeError(f"semantic_stub: {h}x{w} not divisible by {p}")
    patches = img.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4)
    flat = patches.reshape(h // p, w // p, p * p * 3)
    return flat @ _semantic_matrix(seed)


@dataclass
class ModalityDescriptor:
    """One pluggable modality: a name and an encoder mapping an HxWx3 image
    to raw features at input (or coarser, resampled later) resolution."""

    name: str
    encoder: Callable[[np.ndarray], np.ndarray]
    trainable: bool = False
    channels: int = 1          # raw channel count the encoder emits


@dataclass
class ModalityFeatures:
    modality: str
    pyramid: Dict[int, Tensor]      # scale -> (H/2^s, W/2^s, 2^s*C)


@dataclass
class ModalityRegistry:
    descriptors: Dict[str, ModalityDescriptor] = field(default_factory=dict)
    call_counts: Dict[str, int] = field(default_factory=dict)
    _cache: Dict[tuple, np.ndarray] = field(default_factory=dict)

    def register(self, descriptor: ModalityDescriptor) -> "ModalityRegistry":
        if descriptor.name in self.descriptors:
            raise ConfigError(f"modality {descriptor.name!r} already registered")
        self.descriptors[descriptor.name] = descriptor
        self.call_counts[descriptor.name] = 0
        return self

    @property
    def names(self) -> List[str]:
        return list(self.descriptors)

    def __len__(self):
        return len(self.descriptors)

    def extract_all(self, img: np.ndarray) -> Dict[str, np.ndarray]:
        """Run every registered encoder on the image, memoized by content so
        refinement stages reuse one extraction."""
        img = np.asarray(img, dtype=np.float64)
        digest = hashlib.sha1(img.tobytes()).hexdigest()
        out = {}
        for name, desc in self.descriptors.items():
            key = (name, digest, img.shape)
            if key not in self._cache:
                self.call_counts[name] += 1
                self._cache[key] = desc.encoder(img)
            out[name] = self._cache[key]
        # FIFO bound so long training runs don't accumulate stale features
        while len(self._cache) > _CACHE_MAX:
            self._cache.pop(next(iter(self._cache)))
        return out

    def clear_cache(self):
        self._cache.clear()


def default_registry(semantic_seed: int = 1234,
                     names: List[str] | None = None) -> ModalityRegistry:
    available = {
        "depth": ModalityDescriptor("depth", depth_stub, channels=1),
        "luminance": ModalityDescriptor("luminance", luminance_stack,
                                        trainable=True,
                                        channels=len(LUMINANCE_STACK_CHANNELS)),
        "semantic": ModalityDescriptor(
            "semantic", lambda img: semantic_stub(img, semantic_seed),
            channels=SEMANTIC_DIM),
    }
    registry = ModalityRegistry()
    for name in (names if names is not None else list(available)):
        if name not in available:
            raise ConfigError(f"unknown modality {name!r}; "
                              f"known: {sorted(available)}")
        registry.register(available[name])
    return registry


def raw_channels(name: str) -> int:
    if name == "luminance":
        return len(LUMINANCE_STACK_CHANNELS)
    if name == "depth":
        return 1
    if name == "semantic":
        return SEMANTIC_DIM
    raise ConfigError(f"no registered channel count for modality {name!r}")


class ModalityProjector(Module):
    """Trainable projection of raw modality features onto the per-scale
    pyramid contract: nearest-resize to full resolution, 1x1 projection to C,
    then the shared down2 operator between scales."""

    def __init__(self, in_channels: int, width: int, rng: np.random.Generator):
        self.proj = Conv2d(1, 1, in_channels, width, rng)
        self.down1 = Down2(width, rng)
        self.down2 = Down2(2 * width, rng)

    def __call__(self, raw: np.ndarray, height: int, width: int,
                 modality: str = "") -> ModalityFeatures:
        resized = filters.nearest_resize(np.asarray(raw, dtype=np.float64),
                                         height, width)
        f0 = self.proj(as_tensor(resized))
        f1 = self.down1(f0)
        f2 = self.down2(f1)
        return ModalityFeatures(modality, {0: f0, 1: f1, 2: f2})


class LuminanceEncoder(Module):
    """The luminance modality end to end: raw stack plus a trainable 1x1
    projection to the model base width."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.proj = Conv2d(1, 1, len(LUMINANCE_STACK_CHANNELS), width, rng)

    def stack(self, img: np.ndarray) -> np.ndarray:
        return luminance_stack(img)

    def __call__(self, img: np.ndarray) -> Tensor:
        return self.proj(as_tensor(self.stack(img)))
