"""One-stage Retinex core: illumination prior, estimator, restorer feed.

The estimator maps (image, prior) to a lit-up image and lit-up features:
concat -> 1x1 conv to C channels -> 5x5 depthwise conv (the lit-up
features) -> 1x1 conv to a 3-channel illumination map, with the lit-up
image formed multiplicatively as image * illumination map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Conv2d, DepthwiseConv2d, Module, Tensor, ops
from .numerics.tensor import as_tensor


@dataclass
class EnhancementSample:
    """A paired low-light input and optional ground truth, values in [0, 1]."""

    low: np.ndarray
    gt: Optional[np.ndarray] = None
    prior: Optional[np.ndarray] = None

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        if self.low.ndim != 3 or self.low.shape[-1] != 3:
            raise ShapeError(f"low image must be HxWx3, got {self.low.shape}")
        if self.gt is not None:
            self.gt = np.asarray(self.gt, dtype=np.float64)
            if self.gt.shape != self.low.shape:
                raise ShapeError(
                    f"gt shape {self.gt.shape} != low shape {self.low.shape}")
        if self.prior is None:
            self.prior = compute_prior(self.low)


@dataclass
class LitUpState:
    lit_image: Tensor            # H x W x 3
    lit_features: Tensor         # H x W x C
    illumination_map: Tensor     # H x W x 3
    restorer_input: Tensor       # H x W x C entry features


def compute_prior(low: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Per-pixel brightness prior: channel mean (default) or channel max."""
    low = np.asarray(low, dtype=np.float64)
    if mode == "mean":
        return low.mean(axis=-1, keepdims=True)
    if mode == "max":
        return low.max(axis=-1, keepdims=True)
    raise ConfigError(f"unknown prior mode {mode!r}")


def prior_tensor(low: Tensor, mode: str = "mean") -> Tensor:
    """Graph-attached prior, for refinement stages fed by earlier outputs."""
    if mode == "mean":
        return ops.channel_mean(low)
    if mode == "max":
        return ops.channel_max(low)
    raise ConfigError(f"unknown prior mode {mode!r}")


class IlluminationEstimator(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        self.width = width
        self.conv_in = Conv2d(1, 1, 4, width, rng)
        self.depthwise = DepthwiseConv2d(5, width, rng)
        self.conv_out = Conv2d(1, 1, width, 3, rng)

    def __call__(self, image, prior):
        image = as_tensor(image)
        prior = prior if isinstance(prior, Tensor) else as_tensor(prior)
        if image.shape[:2] != prior.shape[:2]:
            raise ShapeError(f"image {image.shape} and prior {prior.shape} "
                             f"disagree spatially")
        feed = ops.concat([image, prior], axis=-1)
        hidden = self.conv_in(feed)
        lit_features = self.depthwise(hidden)
        illum = self.conv_out(lit_features)
        lit_image = ops.mul(image, illum)
        return lit_image, lit_features, illum

    def force_identity_lighting(self):
        """Pin the output conv so the illumination map is exactly 1
        everywhere (lit image == input). Test/diagnostic hook."""
        self.conv_out.w.data = np.zeros_like(self.conv_out.w.data)
        self.conv_out.b.data = np.ones_like(self.conv_out.b.data)


class RestorerEntry(Module):
    """Projects the lit-up image to C channels and adds the lit-up features,
    forming the restorer's entry feature map."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.proj = Conv2d(1, 1, 3, width, rng)

    def __call__(self, lit_image, lit_features) -> Tensor:
        return ops.add(self.proj(lit_image), lit_features)


def build_lit_state(estimator: IlluminationEstimator, entry: RestorerEntry,
                    image, prior) -> LitUpState:
    lit_image, lit_features, illum = estimator(image, prior)
    feed = entry(lit_image, lit_features)
    return LitUpState(lit_image=lit_image, lit_features=lit_features,
                      illumination_map=illum, restorer_input=feed)
