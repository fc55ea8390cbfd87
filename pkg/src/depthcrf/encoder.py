"""Four-stage hierarchical window-attention encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import HierarchicalAdapter
from .errors import ConfigError, DimensionError
from .nn import LayerNorm, Linear, Mlp, Module, parameter
from .tensor import (
    Tensor,
    add,
    concat,
    conv2d,
    expand,
    mac_scope,
    matmul,
    mul,
    permute,
    record_event,
    reshape,
    softmax_lastdim,
    take,
)
from .window import (
    attention_mask,
    effective_window,
    relative_position_index,
    window_partition,
    window_reverse,
)


@dataclass
class FeaturePyramid:
    """Encoder outputs at 1/4, 1/8, 1/16 and 1/32 of the input resolution."""

    f4: Tensor
    f8: Tensor
    f16: Tensor
    f32: Tensor

    def levels(self):
        return [self.f4, self.f8, self.f16, self.f32]

    @classmethod
    def from_levels(cls, levels):
        return cls(*levels)


def _split_heads(x, heads):
    n, t, c = x.shape
    return permute(reshape(x, (n, t, heads, c // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    n, h, t, d = x.shape
    return reshape(permute(x, (0, 2, 1, 3)), (n, t, h * d))


def relative_bias(table, size, table_size, n):
    """Gather a (n, heads, S*S, S*S) additive bias from a relative-offset table."""
    idx = relative_position_index(size, table_size)
    b = permute(take(table, idx, axis=0), (2, 0, 1))
    return expand(reshape(b, (1,) + b.shape), (n,) + b.shape)


def _batched_mask(mask, batch):
    if mask is None:
        return None
    return np.tile(mask, (batch, 1, 1))[:, None]


def window_attention(win, heads, qkv, proj, bias=None, mask=None, return_weights=False):
    """Multi-head attention inside each window of (num_windows, S*S, C) tokens.

    ``qkv`` and ``proj`` are :class:`Linear` layers; ``bias`` is an additive
    (num_windows, heads, S*S, S*S) tensor and ``mask`` a constant array that
    broadcasts against it.
    """
    n, t, c = win.shape
    if c % heads:
        raise ConfigError(f"{c} channels not divisible by {heads} heads")
    d = c // heads
    with mac_scope("attention"):
        q, k, v = (_split_heads(x, heads) for x in _chunks(qkv(win), 3))
        logits = matmul(mul(q, d**-0.5), permute(k, (0, 1, 3, 2)))
        if bias is not None:
            logits = add(logits, bias)
        if mask is not None:
            logits = add(logits, mask)
        weights = softmax_lastdim(logits)
        out = proj(_merge_heads(matmul(weights, v)))
    return (out, weights) if return_weights else out


def _chunks(x, n):
    c = x.shape[-1] // n
    return [x[..., i * c : (i + 1) * c] for i in range(n)]


class WindowAttention(Module):
    def __init__(self, dim, heads, window, rng):
        if dim % heads:
            raise ConfigError(f"{dim} channels not divisible by {heads} heads")
        self.heads, self.window = heads, window
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.rel_table = parameter(np.zeros(((2 * window - 1) ** 2, heads)))

    def forward(self, windows, size, mask=None, return_weights=False):
        bias = relative_bias(self.rel_table, size, self.window, windows.shape[0])
        return window_attention(windows, self.heads, self.qkv, self.proj, bias, mask, return_weights)


class EncoderBlock(Module):
    """Pre-norm window-attention block; optional adapter hooks around MSA and MLP."""

    def __init__(self, dim, heads, window, shifted, mlp_ratio, rng, adapter=None):
        self.window, self.shifted = window, shifted
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)
        self.adapter = adapter

    def forward(self, x):
        B, H, W, C = x.shape
        size, shift = effective_window(H, W, self.window, self.window // 2 if self.shifted else 0)
        y = self.norm1(x)
        if self.adapter is not None:
            y = self.adapter.scale_broadcast(y)
        part = window_partition(y, size, shift)
        mask = _batched_mask(attention_mask(H, W, size, shift), B)
        record_event("attention", images=B, tokens=H * W, dim=C, window=size)
        x = add(x, window_reverse(part, self.attn(part.windows, size, mask)))
        y = self.norm2(x)
        m = self.mlp(y)
        if self.adapter is not None:
            m = add(m, self.adapter.perceive(y))
        return add(x, m)


class PatchMerging(Module):
    """2x2 neighbourhood concat followed by a linear map to twice the width."""

    def __init__(self, dim, rng):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x):
        parts = [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]]
        return self.reduction(self.norm(concat(parts, axis=-1)))


class EncoderStage(Module):
    def __init__(self, dim, depth, heads, window, mlp_ratio, rng, downsample, adapters):
        self.downsample = PatchMerging(dim // 2, rng) if downsample else None
        self.blocks = [
            EncoderBlock(dim, heads, window, i % 2 == 1, mlp_ratio, rng, adapters[i] if adapters else None)
            for i in range(depth)
        ]
        self.norm = LayerNorm(dim)

    def forward(self, x):
        if self.downsample is not None:
            x = self.downsample(x)
        for blk in self.blocks:
            x = blk(x)
        return x, permute(self.norm(x), (0, 3, 1, 2))


class Encoder(Module):
    def __init__(self, cfg, rng, adapter_rng=None):
        adapter_rng = adapter_rng if adapter_rng is not None else rng
        dims = cfg.stage_dims()
        c0 = dims[0]
        bound = 1.0 / np.sqrt(3 * 16)
        self.patch_weight = parameter(rng.uniform(-bound, bound, (c0, 3, 4, 4)))
        self.patch_bias = parameter(np.zeros(c0))
        self.patch_norm = LayerNorm(c0)
        self.stages = []
        for i, (dim, depth, heads) in enumerate(zip(dims, cfg.depths, cfg.heads)):
            adapters = None
            if cfg.ha_enabled:
                adapters = [
                    HierarchicalAdapter(dim, cfg.adapter_ratio, adapter_rng, cfg.adapter_scale_init) for _ in range(depth)
                ]
            self.stages.append(
                EncoderStage(dim, depth, heads, cfg.window_size, cfg.mlp_ratio, rng, i > 0, adapters)
            )

    def forward(self, img):
        if img.ndim != 4 or img.shape[1] != 3:
            raise DimensionError(f"encoder expects (B, 3, H, W) images, got {img.shape}")
        H, W = img.shape[2:]
        if H % 32 or W % 32:
            raise DimensionError(f"input spatial size {H}x{W} must be divisible by 32 on axes 2 and 3")
        x = conv2d(img, self.patch_weight, self.patch_bias, stride=4)
        x = self.patch_norm(permute(x, (0, 2, 3, 1)))
        levels = []
        for stage in self.stages:
            x, feat = stage(x)
            levels.append(feat)
        return FeaturePyramid.from_levels(levels)

    def adapters(self):
        return [b.adapter for s in self.stages for b in s.blocks if b.adapter is not None]
