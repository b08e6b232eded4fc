"""Differentiable operations on :class:`Tensor`.

Every op builds a single graph node with a hand-written backward closure.
Gradient correctness of each op is established against central finite
differences in the test suite; that check, not the derivation, is the
contract.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor, as_tensor, make_node

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _p(x) -> Tensor:
    """Unwrap Parameter -> Tensor, pass Tensors through, lift arrays."""
    if isinstance(x, Parameter):
        return x.tensor
    return as_tensor(x)


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b):
    a, b = _p(a), _p(b)
    if a.shape == b.shape:
        out = a.data + b.data

        def bwd(g):
            return [(a, g), (b, g)]

        return make_node(out, (a, b), bwd)
    # bias-add: b is 1-D and matches the last axis of a
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        out = a.data + b.data

        def bwd(g):
            axes = tuple(range(g.ndim - 1))
            return [(a, g), (b, g.sum(axis=axes) if axes else g)]

        return make_node(out, (a, b), bwd)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b):
    return add(a, scale(_p(b), -1.0))


def scale(a, s: float):
    a = _p(a)
    s = float(s)
    out = a.data * s

    def bwd(g):
        return [(a, g * s)]

    return make_node(out, (a,), bwd)


def add_scalar(a, s: float):
    a = _p(a)
    out = a.data + float(s)

    def bwd(g):
        return [(a, g)]

    return make_node(out, (a,), bwd)


def mul(a, b):
    a = _p(a)
    if isinstance(b, (int, float)):
        return scale(a, b)
    b = _p(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    out = a.data * b.data

    def bwd(g):
        return [(a, g * b.data), (b, g * a.data)]

    return make_node(out, (a, b), bwd)


def abs_(a):
    a = _p(a)
    out = np.abs(a.data)

    def bwd(g):
        return [(a, g * np.sign(a.data))]

    return make_node(out, (a,), bwd)


def sigmoid(a):
    a = _p(a)
    # evaluate on the negative half-line via exp(x) to dodge overflow; the
    # clip keeps deep saturation strictly inside (0, 1) where exp underflows
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, 0, None))),
                   np.exp(np.clip(x, None, 0)) / (1.0 + np.exp(np.clip(x, None, 0))))
    out = np.clip(out, 1e-308, 1.0 - 1e-16)

    def bwd(g):
        return [(a, g * out * (1.0 - out))]

    return make_node(out, (a,), bwd)


def tanh(a):
    a = _p(a)
    out = np.tanh(a.data)

    def bwd(g):
        return [(a, g * (1.0 - out * out))]

    return make_node(out, (a,), bwd)


def gelu(a):
    a = _p(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return [(a, g * (cdf + x * pdf))]

    return make_node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra / shape


def matmul(a, b):
    a, b = _p(a), _p(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return make_node(out, (a, b), bwd)


def transpose2d(a):
    a = _p(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose2d: expected a matrix, got shape {a.shape}")
    out = a.data.T.copy()

    def bwd(g):
        return [(a, g.T)]

    return make_node(out, (a,), bwd)


def reshape(a, shape):
    a = _p(a)
    shape = tuple(shape)
    orig = a.shape
    out = a.data.reshape(shape)

    def bwd(g):
        return [(a, g.reshape(orig))]

    return make_node(out, (a,), bwd)


def concat(tensors: Sequence, axis: int = -1):
    ts = [_p(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def bwd(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return list(zip(ts, pieces))

    return make_node(out, tuple(ts), bwd)


def narrow(a, axis: int, start: int, length: int):
    """Contiguous slice along one axis; backward zero-pads."""
    a = _p(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()

    def bwd(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return [(a, full)]

    return make_node(out, (a,), bwd)


def sum_all(a):
    a = _p(a)
    out = np.asarray(a.data.sum())

    def bwd(g):
        return [(a, np.broadcast_to(g, a.shape).astype(np.float64))]

    return make_node(out, (a,), bwd)


def mean_all(a):
    a = _p(a)
    n = a.size
    out = np.asarray(a.data.mean())

    def bwd(g):
        return [(a, np.broadcast_to(g / n, a.shape).astype(np.float64))]

    return make_node(out, (a,), bwd)


def channel_mean(a):
    """Mean over the last axis, kept as a singleton channel."""
    a = _p(a)
    c = a.shape[-1]
    out = a.data.mean(axis=-1, keepdims=True)

    def bwd(g):
        return [(a, np.repeat(g / c, c, axis=-1))]

    return make_node(out, (a,), bwd)


def channel_max(a):
    """Max over the last axis, kept as a singleton channel.

    Subgradient: all mass to the argmax entry (ties broken toward the first).
    """
    a = _p(a)
    idx = a.data.argmax(axis=-1)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)

    def bwd(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx[..., None], g, axis=-1)
        return [(a, full)]

    return make_node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# normalization / attention primitives


def softmax(a, axis: int = -1):
    a = _p(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return [(a, out * (g - dot))]

    return make_node(out, (a,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-6):
    """Normalize each row over the last axis to zero mean / unit variance,
    then apply the affine (gain, bias)."""
    x, gain, bias = _p(x), _p(gain), _p(bias)
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(
            f"layer_norm: affine extents {gain.shape}/{bias.shape} do not match C={c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=axes)
        dbias = g.sum(axis=axes)
        return [(x, dx), (gain, dgain), (bias, dbias)]

    return make_node(out, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# convolution / resampling (H x W x C layout)


def _conv_geometry(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0):
    """Cross-correlation of an H x W x Cin image with a kh x kw x Cin x Cout
    kernel. Zero padding."""
    x, w = _p(x), _p(w)
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected HWC input and khkwCinCout kernel, "
                         f"got {x.shape} and {w.shape}")
    h, wd, cin = x.shape
    kh, kw, kcin, cout = w.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: kernel Cin {kcin} != input Cin {cin}")
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise ConfigError(f"conv2d: kernel {kh}x{kw} exceeds padded input "
                          f"{h + 2 * padding}x{wd + 2 * padding}")
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        return _conv1x1(x, w, b, h, wd, cin, cout)
    oh, ow = _conv_geometry(h, wd, kh, kw, stride, padding)
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::stride, ::stride]                       # (oh, ow, cin, kh, kw)
    cols = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(oh, ow, cout)
    parents = [x, w]
    if b is not None:
        b = _p(b)
        out = out + b.data
        parents.append(b)

    def bwd(g):
        gflat = g.reshape(oh * ow, cout)
        dw = (cols.T @ gflat).reshape(kh, kw, cin, cout)
        dcols = (gflat @ wmat.T).reshape(oh, ow, kh, kw, cin)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[i:i + oh * stride:stride, j:j + ow * stride:stride, :] += dcols[:, :, i, j, :]
        dx = dxp[padding:padding + h, padding:padding + wd, :]
        grads = [(x, dx), (w, dw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 1))))
        return grads

    return make_node(out, tuple(parents), bwd)


def _conv1x1(x, w, b, h, wd, cin, cout):
    # pointwise convolution == per-pixel matmul; skip the im2col machinery
    wmat = w.data.reshape(cin, cout)
    out = (x.data.reshape(h * wd, cin) @ wmat).reshape(h, wd, cout)
    parents = [x, w]
    if b is not None:
        b = _p(b)
        out = out + b.data
        parents.append(b)

    def bwd(g):
        gflat = g.reshape(h * wd, cout)
        dx = (gflat @ wmat.T).reshape(h, wd, cin)
        dw = (x.data.reshape(h * wd, cin).T @ gflat).reshape(1, 1, cin, cout)
        grads = [(x, dx), (w, dw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 1))))
        return grads

    return make_node(out, tuple(parents), bwd)


def depthwise_conv2d(x, w, b=None, padding: int = 0):
    """Per-channel cross-correlation with a kh x kw x C kernel, stride 1."""
    x, w = _p(x), _p(w)
    h, wd, c = x.shape
    kh, kw, kc = w.shape
    if kc != c:
        raise ShapeError(f"depthwise_conv2d: kernel C {kc} != input C {c}")
    oh, ow = _conv_geometry(h, wd, kh, kw, 1, padding)
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    out = np.zeros((oh, ow, c))
    for i in range(kh):
        for j in range(kw):
            out += xp[i:i + oh, j:j + ow, :] * w.data[i, j, :]
    parents = [x, w]
    if b is not None:
        b = _p(b)
        out = out + b.data
        parents.append(b)

    def bwd(g):
        dw = np.zeros_like(w.data)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = xp[i:i + oh, j:j + ow, :]
                dw[i, j, :] = (patch * g).sum(axis=(0, 1))
                dxp[i:i + oh, j:j + ow, :] += g * w.data[i, j, :]
        dx = dxp[padding:padding + h, padding:padding + wd, :]
        grads = [(x, dx), (w, dw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 1))))
        return grads

    return make_node(out, tuple(parents), bwd)


def nearest_up2(x):
    """2x nearest-neighbor spatial upsampling (channel-preserving)."""
    x = _p(x)
    h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

    def bwd(g):
        dx = g.reshape(h, 2, w, 2, c).sum(axis=(1, 3))
        return [(x, dx)]

    return make_node(out, (x,), bwd)


def down2(x, w, b=None):
    """Halve spatial extents, double channels: stride-2 2x2 conv C -> 2C."""
    x = _p(x)
    h, wd, c = x.shape
    if h % 2 or wd % 2:
        raise ShapeError(f"down2: extents {h}x{wd} not divisible by 2")
    wt = _p(w)
    if wt.shape != (2, 2, c, 2 * c):
        raise ShapeError(f"down2: kernel shape {wt.shape} != (2, 2, {c}, {2 * c})")
    return conv2d(x, w, b, stride=2, padding=0)


def up2(x, w, b=None):
    """Double spatial extents, halve channels: nearest 2x then 1x1 conv."""
    x = _p(x)
    c = x.shape[-1]
    if c % 2:
        raise ShapeError(f"up2: channel count {c} not divisible by 2")
    wt = _p(w)
    if wt.shape != (1, 1, c, c // 2):
        raise ShapeError(f"up2: kernel shape {wt.shape} != (1, 1, {c}, {c // 2})")
    return conv2d(nearest_up2(x), w, b)


def resample(x, factor: str, w, b=None):
    """Scale-step resampling obeying the (H/2^s, W/2^s, 2^s C) pyramid contract."""
    if factor == "down2":
        return down2(x, w, b)
    if factor == "up2":
        return up2(x, w, b)
    raise ConfigError(f"resample: unknown factor {factor!r}")


# ---------------------------------------------------------------------------
# tokenization


def tokenize(f):
    """H' x W' x C' feature map -> N x C' token matrix, row-major."""
    f = _p(f)
    h, w, c = f.shape
    return reshape(f, (h * w, c))


def detokenize(t, h: int, w: int):
    t = _p(t)
    n, c = t.shape
    if n != h * w:
        raise ShapeError(f"detokenize: {n} tokens cannot fill {h}x{w}")
    return reshape(t, (h, w, c))
