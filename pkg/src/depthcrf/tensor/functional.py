"""Differentiable primitives for dense prediction networks.

Image tensors use the ``(B, C, H, W)`` layout; token tensors keep the channel
on the last axis.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from ..errors import DimensionError
from .core import Tensor, _result, permute, record_macs, reshape


# --- linear algebra -----------------------------------------------------------


def matmul(a, b):
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``.

    ``b`` is either 2-D (shared across the batch) or has the same batch axes
    as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner axes differ, {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ, {a.shape[:-2]} vs {b.shape[:-2]}")
    out = a.data @ b.data
    record_macs(out.size * a.shape[-1])

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(out, (a, b), back)


def linear(x, w, b=None):
    """Affine map over the last axis: ``x @ w + b`` with ``w`` of shape (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input features {x.shape[-1]} vs weight rows {w.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    record_macs(out.size * w.shape[0])
    if b is not None:
        out = out + b.data
    out = out.reshape(lead + (w.shape[1],))

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _result(out, parents, back)


# --- convolution ------------------------------------------------------------


def _check_conv(x, w, cin_axis, op):
    if x.ndim != 4:
        raise DimensionError(f"{op}: input must be (B, C, H, W), got rank {x.ndim}")
    if w.ndim != 4:
        raise DimensionError(f"{op}: kernel must be rank 4, got rank {w.ndim}")
    if x.shape[1] != w.shape[cin_axis]:
        raise DimensionError(
            f"{op}: input channel axis 1 has {x.shape[1]} but kernel axis {cin_axis} has {w.shape[cin_axis]}"
        )


def _windows(xp, kh, kw, stride):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _col2im(cols, shape, kh, kw, stride, ho, wo):
    """Scatter-add (B, Ho, Wo, C, kh, kw) patches back into a (B, C, H, W) canvas."""
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation. ``w`` has shape (Cout, Cin, kh, kw)."""
    _check_conv(x, w, 1, "conv2d")
    _, _, H, W = x.shape
    cout, cin, kh, kw = w.shape
    ho = (H + 2 * padding - kh) // stride + 1
    wo = (W + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W} on axes 2/3")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    record_macs(out.size * cin * kh * kw)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            cols = np.tensordot(g, w.data, axes=([1], [0]))  # (B, Ho, Wo, Cin, kh, kw)
            gxp = _col2im(cols, xp.shape, kh, kw, stride, ho, wo)
            gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w, b) if b is not None else (x, w)
    return _result(out, parents, back)


def deconv2d(x, w, b=None, stride=1, padding=0):
    """Transposed convolution, the adjoint of :func:`conv2d` in its input.

    ``w`` has shape (Cin, Cout, kh, kw); output size is
    ``(H - 1) * stride - 2 * padding + kh``.
    """
    _check_conv(x, w, 0, "deconv2d")
    if stride < 1:
        raise ValueError("deconv2d: stride must be >= 1")
    B, _, H, W = x.shape
    cin, cout, kh, kw = w.shape
    full_h, full_w = (H - 1) * stride + kh, (W - 1) * stride + kw
    ho, wo = full_h - 2 * padding, full_w - 2 * padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"deconv2d: padding {padding} leaves no output on axes 2/3")
    cols = np.tensordot(x.data, w.data, axes=([1], [0]))  # (B, H, W, Cout, kh, kw)
    record_macs(cols.size * cin)
    full = _col2im(cols, (B, cout, full_h, full_w), kh, kw, stride, H, W)
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        win = _windows(gfull, kh, kw, stride)  # (B, Cout, H, W, kh, kw)
        gx = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3])) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w, b) if b is not None else (x, w)
    return _result(out, parents, back)


# --- activations --------------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = (x.data * cdf).astype(x.dtype, copy=False)

    def back(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _result(out, (x,), back)


def sigmoid(x):
    out = expit(x.data).astype(x.dtype, copy=False)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax_lastdim(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), back)


def l2_normalize(x, eps=1e-8):
    """Scale each last-axis vector to unit length: ``x / (||x|| + eps)``."""
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    d = n + eps
    out = x.data / d

    def back(g):
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(n > 0, dot / (d * d * n), 0.0)
        return (g / d - x.data * coef,)

    return _result(out, (x,), back)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then apply a per-feature affine map."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs features {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _result(out, (x, gamma, beta), back)


# --- resampling ---------------------------------------------------------------


def _resample(x, mh, mw):
    """Separable linear resampling ``mh @ x @ mw.T`` over the two spatial axes."""
    mh = mh.astype(x.dtype)
    mw = mw.astype(x.dtype)
    out = (mh @ x.data) @ mw.T
    record_macs(x.shape[0] * x.shape[1] * (mh.shape[0] * mh.shape[1] * x.shape[3] + out.shape[2] * mw.size))

    def back(g):
        return ((mh.T @ g) @ mw,)

    return _result(out, (x,), back)


def adaptive_bins(size, out):
    """Bin ``i`` spans ``[floor(i*size/out), ceil((i+1)*size/out))``."""
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def _pool_matrix(size, out):
    m = np.zeros((out, size))
    for i, (lo, hi) in enumerate(adaptive_bins(size, out)):
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool(x, out_h, out_w):
    """Average over ``out_h x out_w`` bins partitioning the spatial grid."""
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool: expected (B, C, H, W), got rank {x.ndim}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"adaptive_avg_pool: output size must be positive, got {out_h}x{out_w}")
    H, W = x.shape[2:]
    if out_h > H or out_w > W:
        raise ValueError(f"adaptive_avg_pool: output {out_h}x{out_w} exceeds input {H}x{W}")
    return _resample(x, _pool_matrix(H, out_h), _pool_matrix(W, out_w))


def _bilinear_matrix(size, out):
    m = np.zeros((out, size))
    scale = size / out
    for i in range(out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), size - 1)
        i1 = min(i0 + 1, size - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m


def upsample_bilinear(x, out_h, out_w):
    """Bilinear resize with half-pixel centers (corners not aligned)."""
    if x.ndim != 4:
        raise DimensionError(f"upsample_bilinear: expected (B, C, H, W), got rank {x.ndim}")
    H, W = x.shape[2:]
    return _resample(x, _bilinear_matrix(H, out_h), _bilinear_matrix(W, out_w))


def pixel_shuffle(x, r):
    """Rearrange (B, C*r*r, H, W) into (B, C, H*r, W*r)."""
    B, C, H, W = x.shape
    if C % (r * r):
        raise ValueError(f"pixel_shuffle: {C} channels not divisible by r^2 = {r * r}")
    c = C // (r * r)
    y = reshape(x, (B, c, r, r, H, W))
    y = permute(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (B, c, H * r, W * r))


def pixel_unshuffle(x, r):
    """Inverse of :func:`pixel_shuffle`."""
    B, C, H, W = x.shape
    if H % r or W % r:
        raise ValueError(f"pixel_unshuffle: spatial size {H}x{W} not divisible by {r}")
    y = reshape(x, (B, C, H // r, r, W // r, r))
    y = permute(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (B, C * r * r, H // r, W // r))
