"""Hierarchical awareness adapter: perception bottleneck and scaled broadcast."""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .nn import Module, parameter
from .tensor import add, conv2d, deconv2d, expand, gelu, mean, mul, permute, reshape


def broadcast(tokens):
    """Add the mean token to every token: ``x_i + mean_j x_j`` over axis -2."""
    m = mean(tokens, axis=-2, keepdims=True)
    return add(tokens, expand(m, tokens.shape))


def broadcast_scaled(tokens, lam):
    """``x_i + lam * mean_j x_j`` with a per-channel scale vector ``lam``."""
    d = tokens.shape[-1]
    if lam.shape != (d,):
        raise DimensionError(f"broadcast_scaled: scale has shape {lam.shape}, tokens have {d} channels")
    m = mean(tokens, axis=-2, keepdims=True)
    lam_b = expand(reshape(lam, (1,) * (tokens.ndim - 1) + (d,)), m.shape)
    return add(tokens, expand(mul(m, lam_b), tokens.shape))


class HierarchicalAdapter(Module):
    """Adapter attached to one encoder block.

    ``perceive`` is the channel path (1x1 conv down, GELU, 1x1 transposed conv
    up) added to the MLP output; ``scale_broadcast`` runs on the tokens
    entering attention.
    """

    def __init__(self, dim, ratio, rng, scale_init=1e-2):
        hidden = max(1, math.ceil(dim * ratio))
        self.dim, self.hidden = dim, hidden
        bound = 1.0 / math.sqrt(dim)
        self.down_weight = parameter(rng.uniform(-bound, bound, (hidden, dim, 1, 1)))
        self.down_bias = parameter(np.zeros(hidden))
        self.up_weight = parameter(np.zeros((hidden, dim, 1, 1)))
        self.up_bias = parameter(np.zeros(dim))
        self.scale = parameter(np.full(dim, scale_init))

    def down_project(self, x):
        """(B, d, H, W) -> (B, ceil(d * ratio), H, W)."""
        return conv2d(x, self.down_weight, self.down_bias)

    def up_project(self, h):
        return deconv2d(gelu(h), self.up_weight, self.up_bias)

    def perceive(self, tokens):
        """Perception module on (B, H, W, d) tokens."""
        x = permute(tokens, (0, 3, 1, 2))
        return permute(self.up_project(self.down_project(x)), (0, 2, 3, 1))

    def scale_broadcast(self, tokens):
        """Scaled broadcast over all spatial tokens of each image in (B, H, W, d)."""
        B, H, W, d = tokens.shape
        flat = reshape(tokens, (B, H * W, d))
        return reshape(broadcast_scaled(flat, self.scale), (B, H, W, d))

    def perception_param_count(self):
        return sum(p.size for p in (self.down_weight, self.down_bias, self.up_weight, self.up_bias))

    def zero_(self):
        for p in (self.up_weight, self.up_bias, self.scale):
            p.data[...] = 0
