"""Lightweight parameter-owning modules.

A Module is any object whose attributes (walked in insertion order, so
construction order fixes parameter order deterministically) are Parameters,
other Modules, or lists/dicts of them. ``named_parameters`` produces unique
dotted-path names; the walk order is the canonical parameter order used by
the optimizer and the checkpoint format.
"""

from __future__ import annotations

from typing import Iterator, Tuple

import numpy as np

from ..errors import ConfigError
from .tensor import Parameter


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list:
        names = set()
        out = []
        for name, p in self.named_parameters():
            if name in names:
                raise ConfigError(f"duplicate parameter name {name!r}")
            names.add(name)
            p.name = name
            out.append(p)
        return out

    def parameter_count(self, trainable_only: bool = True) -> int:
        return sum(p.data.size for p in self.parameters()
                   if p.trainable or not trainable_only)


def _walk(value, path):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{path}.{i}")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{path}.{k}")


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Fan-in-scaled uniform init, the package-wide default."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, kh: int, kw: int, cin: int, cout: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, zero_init: bool = False):
        fan = kh * kw * cin
        w = np.zeros((kh, kw, cin, cout)) if zero_init else \
            fan_in_uniform(rng, (kh, kw, cin, cout), fan)
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(cout))
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        from . import ops

        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, k: int, channels: int, rng: np.random.Generator):
        self.w = Parameter(fan_in_uniform(rng, (k, k, channels), k * k))
        self.b = Parameter(np.zeros(channels))
        self.padding = k // 2

    def __call__(self, x):
        from . import ops

        return ops.depthwise_conv2d(x, self.w, self.b, padding=self.padding)


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 zero_init: bool = False):
        w = np.zeros((cin, cout)) if zero_init else fan_in_uniform(rng, (cin, cout), cin)
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(cout))

    def __call__(self, x):
        from . import ops

        return ops.add(ops.matmul(x, self.w), self.b)


class Down2(Module):
    """Trainable scale step: stride-2 2x2 conv, C -> 2C."""

    def __init__(self, cin: int, rng: np.random.Generator):
        self.w = Parameter(fan_in_uniform(rng, (2, 2, cin, 2 * cin), 4 * cin))
        self.b = Parameter(np.zeros(2 * cin))

    def __call__(self, x):
        from . import ops

        return ops.down2(x, self.w, self.b)


class Up2(Module):
    """Trainable scale step: nearest 2x + 1x1 conv, C -> C/2."""

    def __init__(self, cin: int, rng: np.random.Generator):
        self.w = Parameter(fan_in_uniform(rng, (1, 1, cin, cin // 2), cin))
        self.b = Parameter(np.zeros(cin // 2))

    def __call__(self, x):
        from . import ops

        return ops.up2(x, self.w, self.b)
