"""Multi-modal cross-attention fusion and the U-shaped restorer.

A fusion block runs, at one scale, illumination-guided self-attention on the
RGB feature tokens in parallel with one cross-attention branch per
registered modality (queries from RGB, keys/values from the modality).
Per-modality sigmoid gates weight the cross branches; a final sigmoid gate
balances the self branch against the gated cross sum. The block is residual
with a pre-norm FFN tail. The restorer stacks these blocks along a
three-scale encoder/decoder with skip fusion, and the whole thing can be
cascaded as tau refinement stages that share one modality extraction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .modalities import (ModalityFeatures, ModalityProjector,
                         ModalityRegistry, SCALES, raw_channels)
from .numerics import (Conv2d, Down2, Linear, Module, Parameter, Tensor, Up2,
                       fan_in_uniform, ops)
from .numerics.tensor import as_tensor
from .retinex import IlluminationEstimator, RestorerEntry, prior_tensor

GATE_BIAS_INIT = 2.0   # final gate starts ~0.88 open toward self-attention


@dataclass
class RestorerConfig:
    base_width: int = 8
    base_heads: int = 1              # doubled at each scale: (1, 2, 4)
    blocks: Sequence[int] = (1, 1, 2)  # encoder scale0, scale1, bottleneck
    ffn_expansion: int = 2
    tau: int = 1
    modalities: Sequence[str] = ("depth", "luminance", "semantic")
    seed: int = 0
    semantic_seed: int = 1234
    share_stage_weights: bool = False
    prior_mode: str = "mean"

    def __post_init__(self):
        if self.tau not in (1, 2, 3):
            raise ConfigError(f"tau must be in {{1, 2, 3}}, got {self.tau}")
        if len(self.blocks) != 3:
            raise ConfigError("blocks must list (scale0, scale1, bottleneck) counts")
        for s in SCALES:
            width = self.base_width * (2 ** s)
            heads = self.heads_at(s)
            if width % heads:
                raise ConfigError(
                    f"scale {s}: width {width} not divisible by {heads} heads")

    def heads_at(self, scale: int) -> int:
        return self.base_heads * (2 ** scale)

    def width_at(self, scale: int) -> int:
        return self.base_width * (2 ** scale)


# ---------------------------------------------------------------------------
# attention primitives on token matrices (N x C')


def _split_heads(t: Tensor, heads: int) -> List[Tensor]:
    c = t.shape[-1]
    step = c // heads
    return [ops.narrow(t, 1, i * step, step) for i in range(heads)]


def _attend(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """softmax(Q K^T / sqrt(d_head)) V, head-split along channels."""
    outs = []
    for qh, kh, vh in zip(_split_heads(q, heads), _split_heads(k, heads),
                          _split_heads(v, heads)):
        scores = ops.scale(ops.matmul(qh, ops.transpose2d(kh)),
                           1.0 / np.sqrt(qh.shape[-1]))
        outs.append(ops.matmul(ops.softmax(scores, axis=-1), vh))
    return outs[0] if heads == 1 else ops.concat(outs, axis=-1)


def cross_attention(x: Tensor, x_m: Tensor, w_q, w_k_m, w_v_m,
                    heads: int = 1) -> Tensor:
    """RGB tokens query a modality: A_m = softmax(Q K_m^T / sqrt(d)) V_m.

    The modality may carry a different token count than the image; each
    image token attends over however many modality tokens exist.
    """
    q = ops.matmul(x, w_q)
    k = ops.matmul(x_m, w_k_m)
    v = ops.matmul(x_m, w_v_m)
    return _attend(q, k, v, heads)


def ig_self_attention(x: Tensor, f_lu: Tensor, w_q, w_k, w_v,
                      heads: int = 1, positional=None) -> Tensor:
    """Self-attention with the value path modulated by lit-up features:
    S = softmax(Q K^T / sqrt(d)) (V * F_lu)."""
    if x.shape != f_lu.shape:
        raise ShapeError(f"ig_self_attention: tokens {x.shape} vs "
                         f"lit-up features {f_lu.shape}")
    q = ops.matmul(x, w_q)
    k = ops.matmul(x, w_k)
    v = ops.matmul(x, w_v)
    if positional is not None:
        v = ops.add(v, positional(v))
    return _attend(q, k, ops.mul(v, f_lu), heads)


def modality_gate(x: Tensor, branches: Dict[str, Tensor], gate_params) -> Tensor:
    """Gated sum over modalities: U = sum_m sigmoid(X W_m + b_m) * A_m."""
    if set(branches) != set(gate_params):
        raise ConfigError(f"modality set {sorted(branches)} does not match "
                          f"gate parameters {sorted(gate_params)}")
    total: Optional[Tensor] = None
    for name in gate_params:
        w_m, b_m = gate_params[name]
        gate = ops.sigmoid(ops.add(ops.matmul(x, w_m), b_m))
        term = ops.mul(gate, branches[name])
        total = term if total is None else ops.add(total, term)
    if total is None:
        total = Tensor(np.zeros(x.shape))
    return total


def final_gate_fuse(x: Tensor, s: Tensor, u: Tensor, w_f, b_f) -> Tensor:
    """Output = g_f * S + (1 - g_f) * U with g_f = sigmoid(X W_f + b_f)."""
    gate = ops.sigmoid(ops.add(ops.matmul(x, w_f), b_f))
    inv = ops.add_scalar(ops.scale(gate, -1.0), 1.0)
    return ops.add(ops.mul(gate, s), ops.mul(inv, u))


# ---------------------------------------------------------------------------
# blocks


class _CrossProjections(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        self.w_k = Parameter(fan_in_uniform(rng, (width, width), width))
        self.w_v = Parameter(fan_in_uniform(rng, (width, width), width))


class _Gate(Module):
    def __init__(self, width: int, bias_init: float = 0.0):
        self.w = Parameter(np.zeros((width, width)))
        self.b = Parameter(np.full(width, bias_init))


class FusionBlock(Module):
    """Residual fusion block at one scale.

    F'   = F_in + proj(fuse(self-attention, gated cross-attention)) on
           layer-normed tokens;
    F_out = F' + FFN(LN(F')).
    """

    def __init__(self, width: int, heads: int, modality_names: Sequence[str],
                 ffn_expansion: int, rng: np.random.Generator):
        self.width = width
        self.heads = heads
        self.ln1_gain = Parameter(np.ones(width))
        self.ln1_bias = Parameter(np.zeros(width))
        self.w_q = Parameter(fan_in_uniform(rng, (width, width), width))
        self.w_k = Parameter(fan_in_uniform(rng, (width, width), width))
        self.w_v = Parameter(fan_in_uniform(rng, (width, width), width))
        self.pos = Parameter(fan_in_uniform(rng, (3, 3, width), 9))
        self.cross = {m: _CrossProjections(width, rng) for m in modality_names}
        self.gates = {m: _Gate(width) for m in modality_names}
        self.final_gate = _Gate(width, bias_init=GATE_BIAS_INIT)
        self.out_proj = Linear(width, width, rng)
        self.ln2_gain = Parameter(np.ones(width))
        self.ln2_bias = Parameter(np.zeros(width))
        self.ffn1 = Linear(width, ffn_expansion * width, rng)
        self.ffn2 = Linear(ffn_expansion * width, width, rng)

    def _positional(self, h: int, w: int):
        def apply(v: Tensor) -> Tensor:
            spatial = ops.detokenize(v, h, w)
            conv = ops.depthwise_conv2d(spatial, self.pos, padding=1)
            return ops.tokenize(conv)

        return apply

    def _fuse(self, x: Tensor, f_lu: Tensor, feats: Dict[str, Tensor],
              h: int, w: int) -> Tensor:
        s = ig_self_attention(x, f_lu, self.w_q, self.w_k, self.w_v,
                              heads=self.heads, positional=self._positional(h, w))
        branches = {m: cross_attention(x, feats[m], self.w_q,
                                       self.cross[m].w_k, self.cross[m].w_v,
                                       heads=self.heads)
                    for m in self.cross}
        u = modality_gate(x, branches, {m: (g.w, g.b) for m, g in self.gates.items()})
        fused = final_gate_fuse(x, s, u, self.final_gate.w, self.final_gate.b)
        return self.out_proj(fused)

    def __call__(self, f_in: Tensor, f_lu: Tensor,
                 feats: Dict[str, Tensor]) -> Tensor:
        h, w, c = f_in.shape
        if c != self.width:
            raise ShapeError(f"block width {self.width} got input C={c}")
        x_tok = ops.tokenize(f_in)
        lu_tok = ops.tokenize(f_lu)
        feat_tok = {m: ops.tokenize(f) for m, f in feats.items()}
        normed = ops.layer_norm(x_tok, self.ln1_gain, self.ln1_bias)
        f_prime = ops.add(x_tok, self._fuse(normed, lu_tok, feat_tok, h, w))
        normed2 = ops.layer_norm(f_prime, self.ln2_gain, self.ln2_bias)
        ffn = self.ffn2(ops.gelu(self.ffn1(normed2)))
        return ops.detokenize(ops.add(f_prime, ffn), h, w)

    def zero_output_projections(self):
        """Make the block the identity map (residual-path diagnostic)."""
        self.out_proj.w.data = np.zeros_like(self.out_proj.w.data)
        self.out_proj.b.data = np.zeros_like(self.out_proj.b.data)
        self.ffn2.w.data = np.zeros_like(self.ffn2.w.data)
        self.ffn2.b.data = np.zeros_like(self.ffn2.b.data)


class SelfAttentionOnlyBlock:
    """Independently wired modality-free control block sharing a
    FusionBlock's weights; the ablation baseline."""

    def __init__(self, block: FusionBlock):
        self.block = block

    def __call__(self, f_in: Tensor, f_lu: Tensor) -> Tensor:
        b = self.block
        h, w, _ = f_in.shape
        x_tok = ops.tokenize(f_in)
        lu_tok = ops.tokenize(f_lu)
        x = ops.layer_norm(x_tok, b.ln1_gain, b.ln1_bias)
        s = ig_self_attention(x, lu_tok, b.w_q, b.w_k, b.w_v, heads=b.heads,
                              positional=b._positional(h, w))
        u = Tensor(np.zeros(x.shape))
        fused = final_gate_fuse(x, s, u, b.final_gate.w, b.final_gate.b)
        f_prime = ops.add(x_tok, b.out_proj(fused))
        normed2 = ops.layer_norm(f_prime, b.ln2_gain, b.ln2_bias)
        ffn = b.ffn2(ops.gelu(b.ffn1(normed2)))
        return ops.detokenize(ops.add(f_prime, ffn), h, w)


# ---------------------------------------------------------------------------
# restorer


class Restorer(Module):
    """Three-scale U-shaped encoder/decoder of fusion blocks with skip
    fusion, a global residual onto the lit-up image, and a final RGB
    projection."""

    def __init__(self, config: RestorerConfig, modality_names: Sequence[str],
                 rng: np.random.Generator):
        c = config.base_width
        n0, n1, nmid = config.blocks

        def blocks(n, scale):
            return [FusionBlock(config.width_at(scale), config.heads_at(scale),
                                modality_names, config.ffn_expansion, rng)
                    for _ in range(n)]

        self.enc0 = blocks(n0, 0)
        self.down0 = Down2(c, rng)
        self.enc1 = blocks(n1, 1)
        self.down1 = Down2(2 * c, rng)
        self.mid = blocks(nmid, 2)
        self.up1 = Up2(4 * c, rng)
        self.fuse1 = Conv2d(1, 1, 4 * c, 2 * c, rng)
        self.dec1 = blocks(n1, 1)
        self.up0 = Up2(2 * c, rng)
        self.fuse0 = Conv2d(1, 1, 2 * c, c, rng)
        self.dec0 = blocks(n0, 0)
        self.lu_down0 = Down2(c, rng)
        self.lu_down1 = Down2(2 * c, rng)
        self.out_proj = Conv2d(1, 1, c, 3, rng)

    def lit_feature_pyramid(self, f_lu: Tensor) -> Dict[int, Tensor]:
        f1 = self.lu_down0(f_lu)
        return {0: f_lu, 1: f1, 2: self.lu_down1(f1)}

    def __call__(self, entry: Tensor, f_lu: Tensor,
                 pyramids: Dict[str, ModalityFeatures],
                 lit_image: Tensor) -> Tensor:
        h, w, _ = entry.shape
        if h % 4 or w % 4:
            raise ShapeError(f"restorer needs extents divisible by 4, got {h}x{w}")
        lu = self.lit_feature_pyramid(f_lu)

        def feats(scale):
            return {m: p.pyramid[scale] for m, p in pyramids.items()}

        x0 = entry
        for blk in self.enc0:
            x0 = blk(x0, lu[0], feats(0))
        x1 = self.down0(x0)
        for blk in self.enc1:
            x1 = blk(x1, lu[1], feats(1))
        x2 = self.down1(x1)
        for blk in self.mid:
            x2 = blk(x2, lu[2], feats(2))
        y1 = self.fuse1(ops.concat([self.up1(x2), x1], axis=-1))
        for blk in self.dec1:
            y1 = blk(y1, lu[1], feats(1))
        y0 = self.fuse0(ops.concat([self.up0(y1), x0], axis=-1))
        for blk in self.dec0:
            y0 = blk(y0, lu[0], feats(0))
        return ops.add(self.out_proj(y0), lit_image)

    def all_blocks(self) -> List[FusionBlock]:
        return [*self.enc0, *self.enc1, *self.mid, *self.dec1, *self.dec0]

    def zero_output_projections(self):
        """Force the model to the pure-residual path: output == lit image."""
        for blk in self.all_blocks():
            blk.zero_output_projections()
        self.out_proj.w.data = np.zeros_like(self.out_proj.w.data)
        self.out_proj.b.data = np.zeros_like(self.out_proj.b.data)


class Stage(Module):
    """One refinement stage: estimator, entry projection, per-modality
    trainable projection pyramids, restorer."""

    def __init__(self, config: RestorerConfig, modality_names: Sequence[str],
                 rng: np.random.Generator,
                 channel_map: Optional[Dict[str, int]] = None):
        self.estimator = IlluminationEstimator(config.base_width, rng)
        self.entry = RestorerEntry(config.base_width, rng)
        channels = channel_map or {m: raw_channels(m) for m in modality_names}
        self.projectors = {m: ModalityProjector(channels[m],
                                                config.base_width, rng)
                           for m in modality_names}
        self.restorer = Restorer(config, modality_names, rng)

    def __call__(self, image: Tensor, prior: Tensor,
                 raw_features: Dict[str, np.ndarray]) -> Tensor:
        h, w, _ = image.shape
        lit_image, f_lu, _ = self.estimator(image, prior)
        entry = self.entry(lit_image, f_lu)
        pyramids = {m: self.projectors[m](raw_features[m], h, w, m)
                    for m in self.projectors}
        return self.restorer(entry, f_lu, pyramids, lit_image)


class EnhancerModel(Module):
    """Full enhancer: tau cascaded stages over one modality extraction."""

    def __init__(self, config: RestorerConfig, registry: ModalityRegistry):
        missing = set(config.modalities) - set(registry.names)
        if missing:
            raise ConfigError(f"config names unregistered modalities: {sorted(missing)}")
        self.config = config
        self.registry = registry
        rng = np.random.default_rng(config.seed)
        n_stages = 1 if config.share_stage_weights else config.tau
        channels = {m: registry.descriptors[m].channels
                    for m in config.modalities}
        self.stages = [Stage(config, list(config.modalities), rng, channels)
                       for _ in range(n_stages)]

    def _stage(self, t: int) -> Stage:
        return self.stages[0] if self.config.share_stage_weights else self.stages[t]

    def enhance(self, img: np.ndarray, tau: Optional[int] = None,
                stage_times: Optional[list] = None) -> Tensor:
        tau = self.config.tau if tau is None else tau
        if tau not in (1, 2, 3):
            raise ConfigError(f"tau must be in {{1, 2, 3}}, got {tau}")
        if not self.config.share_stage_weights and tau > len(self.stages):
            raise ConfigError(f"model has {len(self.stages)} stages, "
                              f"cannot run tau={tau}")
        img = np.asarray(img, dtype=np.float64)
        h, w, _ = img.shape
        if h % 4 or w % 4:
            raise ShapeError(f"input extents {h}x{w} must be divisible by 4")
        raw = self.registry.extract_all(img)  # one extraction for all stages
        x = as_tensor(img)
        for t in range(tau):
            t0 = time.perf_counter() if stage_times is not None else 0.0
            x = self._stage(t)(x, prior_tensor(x, self.config.prior_mode), raw)
            if stage_times is not None:
                stage_times.append(time.perf_counter() - t0)
        return x


def progressive_refine(img: np.ndarray, model: EnhancerModel,
                       tau: Optional[int] = None) -> Tensor:
    return model.enhance(img, tau=tau)
