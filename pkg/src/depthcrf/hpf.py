"""Hybrid pyramid feature fusion: pooled multi-scale pyramid plus biaxial strip pooling."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, DimensionError
from .nn import Conv2d, Module
from .tensor import (
    add,
    adaptive_avg_pool,
    concat,
    expand,
    mean,
    mul,
    reshape,
    sigmoid,
    upsample_bilinear,
)


@dataclass(frozen=True)
class HpfConfig:
    scales: tuple = (1, 2, 3)
    channels: int = 48
    mode: str = "both"  # "both", "msf" or "baf"

    def __post_init__(self):
        s = self.scales
        if not s or s[0] < 1 or any(a >= b for a, b in zip(s, s[1:])):
            raise ConfigError(f"pyramid scales must be strictly increasing and >= 1, got {s}")
        if self.channels < len(s):
            raise ConfigError(f"{self.channels} channels cannot feed {len(s)} pyramid branches")
        if self.mode not in ("both", "msf", "baf"):
            raise ConfigError(f"unknown fusion mode {self.mode!r}")

    def branch_widths(self):
        """Split the channel count over the branches as evenly as possible (sums to C)."""
        n = len(self.scales)
        q, r = divmod(self.channels, n)
        return tuple(q + (i < r) for i in range(n))


def biaxial_pool(x):
    """Row means ``(B, C, H)`` and column means ``(B, C, W)`` of a (B, C, H, W) map."""
    return mean(x, axis=3), mean(x, axis=2)


def biaxial_combine(y_h, y_v):
    """Outer sum ``y[b, c, i, j] = y_h[b, c, i] + y_v[b, c, j]``."""
    if y_h.shape[:2] != y_v.shape[:2]:
        raise DimensionError(f"biaxial_combine: leading axes {y_h.shape[:2]} vs {y_v.shape[:2]}")
    B, C, H = y_h.shape
    W = y_v.shape[2]
    rows = expand(reshape(y_h, (B, C, H, 1)), (B, C, H, W))
    cols = expand(reshape(y_v, (B, C, 1, W)), (B, C, H, W))
    return add(rows, cols)


def global_prior(x, y, f):
    """Gate ``x`` elementwise by ``sigmoid(f(y))``."""
    g = f(y)
    if g.shape != x.shape:
        raise DimensionError(f"global_prior: gate shape {g.shape} vs feature shape {x.shape}")
    return mul(x, sigmoid(g))


class MultiScaleFusion(Module):
    def __init__(self, cfg, rng):
        self.scales = cfg.scales
        c = cfg.channels
        self.branches = [Conv2d(c, w, 1, rng) for w in cfg.branch_widths()]
        self.fuse = Conv2d(2 * c, c, 1, rng)

    def concat_features(self, x, scales=None):
        """The doubled-channel stack: ``x`` followed by each upsampled pyramid branch."""
        H, W = x.shape[2:]
        scales = scales or self.scales
        for s in scales:
            if s > H or s > W:
                raise ConfigError(f"pyramid scale {s} exceeds feature size {H}x{W}")
        parts = [x]
        for s, conv in zip(scales, self.branches):
            p = conv(adaptive_avg_pool(x, s, s))
            parts.append(upsample_bilinear(p, H, W))
        return concat(parts, axis=1)

    def forward(self, x, scales=None):
        return self.fuse(self.concat_features(x, scales))


class BiaxialFusion(Module):
    """Strip pooling along both axes producing the sigmoid-gated prior, then a 1x1 output map."""

    def __init__(self, channels, rng):
        self.gate = Conv2d(channels, channels, 1, rng)
        self.out = Conv2d(channels, channels, 1, rng)

    def prior(self, x):
        y = biaxial_combine(*biaxial_pool(x))
        return global_prior(x, y, self.gate)

    def forward(self, x):
        return self.out(self.prior(x))


class HpfLevel(Module):
    def __init__(self, cfg, rng):
        self.mode = cfg.mode
        self.msf = MultiScaleFusion(cfg, rng) if cfg.mode in ("both", "msf") else None
        self.baf = BiaxialFusion(cfg.channels, rng) if cfg.mode in ("both", "baf") else None

    def forward(self, x):
        out = x
        if self.msf is not None:
            H, W = x.shape[2:]
            scales = tuple(min(s, H, W) for s in self.msf.scales)
            out = add(out, self.msf(x, scales))
        if self.baf is not None:
            out = add(out, self.baf(x))
        return out

    def zero_(self):
        """Zero the convolutions that close each branch so the level is an identity."""
        if self.msf is not None:
            self.msf.fuse.zero_()
        if self.baf is not None:
            self.baf.out.zero_()


class HybridPyramidFusion(Module):
    """Applies an :class:`HpfLevel` to every pyramid level independently."""

    def __init__(self, channels, scales, mode, rng):
        self.levels = [HpfLevel(HpfConfig(tuple(scales), c, mode), rng) for c in channels]

    def forward(self, pyramid):
        from .encoder import FeaturePyramid

        return FeaturePyramid.from_levels([lvl(x) for lvl, x in zip(self.levels, pyramid.levels())])

    def zero_(self):
        for lvl in self.levels:
            lvl.zero_()


def hpf_forward(pyramid, fusion, enabled=True):
    """Fuse every level of ``pyramid``; identity when the switch is off."""
    return fusion(pyramid) if enabled and fusion is not None else pyramid
