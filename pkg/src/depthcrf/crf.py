"""Window fully-connected CRF decoder.

Pairwise potentials are computed as cosine-similarity window attention with a
learnable temperature, a learnable query bias and a relative-position bias;
unary potentials come from a small convolution stack; each level ends in a
x2 pixel-shuffle upsample.
"""

from __future__ import annotations

import numpy as np

from .encoder import _batched_mask, _merge_heads, _split_heads, relative_bias
from .errors import DimensionError
from .nn import Conv2d, LayerNorm, Linear, Mlp, Module, parameter
from .tensor import (
    add,
    bias_add,
    clamp_min,
    concat,
    div,
    expand,
    gelu,
    l2_normalize,
    mac_scope,
    matmul,
    permute,
    pixel_shuffle,
    record_event,
    reshape,
    sigmoid,
    mul,
    softmax_lastdim,
)
from .window import attention_mask, effective_window, window_partition, window_reverse

TAU_MIN = 0.01


def tau_floor(dtype):
    """Smallest value of ``dtype`` that is >= TAU_MIN (0.01 itself rounds down in float32)."""
    t = np.asarray(TAU_MIN, dtype=dtype)
    return t if float(t) >= TAU_MIN else np.nextafter(t, np.asarray(1, dtype=dtype))


class DynamicScalingAttention(Module):
    def __init__(self, dim, heads, window, rng, tau_init=1.0):
        self.heads, self.window = heads, window
        self.q = Linear(dim, dim, rng, bias=False)
        self.k = Linear(dim, dim, rng, bias=False)
        self.v = Linear(dim, dim, rng)
        self.query_bias = parameter(np.zeros(dim))
        self.tau = parameter(np.array([tau_init]))
        self.rel_table = parameter(np.zeros(((2 * window - 1) ** 2, heads)))
        self.proj = Linear(dim, dim, rng)

    def tau_eff(self):
        return clamp_min(self.tau, float(tau_floor(self.tau.dtype)))

    def clamp_(self):
        np.maximum(self.tau.data, tau_floor(self.tau.dtype), out=self.tau.data)

    def weights(self, tokens, size, mask=None):
        """Attention weights (num_windows, heads, S*S, S*S) and the value heads."""
        n = tokens.shape[0]
        q = bias_add(self.q(tokens), self.query_bias, axis=-1)
        qh = l2_normalize(_split_heads(q, self.heads))
        kh = l2_normalize(_split_heads(self.k(tokens), self.heads))
        vh = _split_heads(self.v(tokens), self.heads)
        cos = matmul(qh, permute(kh, (0, 1, 3, 2)))
        tau = expand(reshape(self.tau_eff(), (1, 1, 1, 1)), cos.shape)
        logits = add(div(cos, tau), relative_bias(self.rel_table, size, self.window, n))
        if mask is not None:
            logits = add(logits, mask)
        return softmax_lastdim(logits), vh

    def forward(self, tokens, size, mask=None, return_weights=False):
        with mac_scope("attention"):
            w, vh = self.weights(tokens, size, mask)
            out = self.proj(_merge_heads(matmul(w, vh)))
        return (out, w) if return_weights else out


class CrfBlock(Module):
    def __init__(self, dim, heads, window, shifted, mlp_ratio, rng, tau_init=1.0):
        self.window, self.shifted = window, shifted
        self.norm1 = LayerNorm(dim)
        self.attn = DynamicScalingAttention(dim, heads, window, rng, tau_init)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)

    def forward(self, x):
        """(B, C, H, W) -> (B, C, H, W)."""
        t = permute(x, (0, 2, 3, 1))
        B, H, W, _ = t.shape
        size, shift = effective_window(H, W, self.window, self.window // 2 if self.shifted else 0)
        part = window_partition(self.norm1(t), size, shift)
        mask = _batched_mask(attention_mask(H, W, size, shift), B)
        record_event("attention", images=B, tokens=H * W, dim=t.shape[-1], window=size)
        t = add(t, window_reverse(part, self.attn(part.windows, size, mask)))
        t = add(t, self.mlp(self.norm2(t)))
        return permute(t, (0, 3, 1, 2))


class ConvBlock(Module):
    """Residual 3x3 convolution pair used in place of attention when fully-connected decoding is off."""

    def __init__(self, dim, rng):
        self.conv1 = Conv2d(dim, dim, 3, rng)
        self.conv2 = Conv2d(dim, dim, 3, rng)

    def forward(self, x):
        return add(x, self.conv2(gelu(self.conv1(x))))


class UnaryPotential(Module):
    def __init__(self, c_in, c_out, rng):
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)

    def forward(self, x):
        return self.conv2(gelu(self.conv1(x)))


class CrfLevel(Module):
    """One decoder level: unary convs, regular + shifted pairwise blocks, x2 pixel shuffle."""

    def __init__(self, state_ch, skip_ch, width, heads, out_ch, window, rng, fc=True, mlp_ratio=2.0, tau_init=1.0):
        self.state_ch, self.skip_ch = state_ch, skip_ch
        self.unary = UnaryPotential(state_ch + skip_ch, width, rng)
        if fc:
            self.blocks = [CrfBlock(width, heads, window, s, mlp_ratio, rng, tau_init) for s in (False, True)]
        else:
            self.blocks = [ConvBlock(width, rng) for _ in range(2)]
        self.shuffle = Conv2d(width, 4 * out_ch, 1, rng)

    def forward(self, state, skip):
        if state is None:
            x = skip
        else:
            if state.shape[0] != skip.shape[0] or state.shape[2:] != skip.shape[2:]:
                raise DimensionError(
                    f"decoder state {state.shape} and skip {skip.shape} differ on batch/spatial axes"
                )
            x = concat([state, skip], axis=1)
        x = self.unary(x)
        for blk in self.blocks:
            x = blk(x)
        return pixel_shuffle(self.shuffle(x), 2)

    def attention_layers(self):
        return [b.attn for b in self.blocks if isinstance(b, CrfBlock)]


class CrfDecoder(Module):
    """Bottom-up decoding from the 1/32 level to a full-resolution depth map in (0, max_depth)."""

    def __init__(self, cfg, skip_channels, rng):
        widths, heads = cfg.decoder_widths, cfg.decoder_heads
        self.max_depth = cfg.max_depth
        skips = list(reversed(skip_channels))  # coarse to fine
        self.levels = []
        state_ch = 0
        for i in range(4):
            out_ch = widths[i + 1] if i < 3 else widths[3]
            self.levels.append(
                CrfLevel(
                    state_ch, skips[i], widths[i], heads[i], out_ch, cfg.window_size, rng,
                    fc=cfg.fc_enabled, mlp_ratio=cfg.decoder_mlp_ratio, tau_init=cfg.tau_init,
                )
            )
            state_ch = out_ch
        self.head = Conv2d(widths[3], 4, 3, rng)

    def forward(self, pyramid):
        state = None
        for level, skip in zip(self.levels, reversed(pyramid.levels())):
            state = level(state, skip)
        logits = pixel_shuffle(self.head(state), 2)
        return mul(sigmoid(logits), self.max_depth)

    def attention_layers(self):
        return [a for lvl in self.levels for a in lvl.attention_layers()]

    def clamp_(self):
        for a in self.attention_layers():
            a.clamp_()


def crf_energy(y, unary, weights, window):
    """Evaluate ``sum_i unary_i * y_i + sum_{i,j same window} w_ij |y_i - y_j|``.

    ``y`` and ``unary`` are (H, W) arrays tiled by ``window`` (an int S or a
    (rows, cols) pair); ``weights`` is (num_windows, n, n) with n pixels per
    window, windows in row-major order.
    """
    return sum(crf_energy_terms(y, unary, weights, window))


def crf_energy_terms(y, unary, weights, window):
    """``(unary_term, pairwise_term)`` of :func:`crf_energy`."""
    y = np.asarray(y, dtype=np.float64)
    unary = np.asarray(unary, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    wh, ww = (window, window) if np.isscalar(window) else tuple(window)
    H, W = y.shape
    if H % wh or W % ww:
        raise ValueError(f"field {H}x{W} is not tiled by {wh}x{ww} windows")
    n = (H // wh) * (W // ww)
    if weights.shape != (n, wh * ww, wh * ww):
        raise ValueError(f"weights shape {weights.shape} != {(n, wh * ww, wh * ww)}")
    if (weights < 0).any():
        raise ValueError("pairwise weights must be nonnegative")
    win = y.reshape(H // wh, wh, W // ww, ww).transpose(0, 2, 1, 3).reshape(n, -1)
    diff = np.abs(win[:, :, None] - win[:, None, :])
    pairwise = float((weights * diff).sum())
    unary_term = float((unary * y).sum())
    return unary_term, pairwise
