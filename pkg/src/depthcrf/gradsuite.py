"""Registry of gradient checks over every primitive and the composite model paths.

Each check builds its inputs from a seeded generator inside 64-bit mode and
returns the worst relative error reported by :func:`grad_check`. Functions are
reduced to scalars as ``sum(out * w)`` with a fixed random ``w`` so every
output element contributes a distinct weight.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, grad_check, verification_mode

TOLERANCE = 1e-4


def _weighted(fn, rng):
    """Wrap ``fn`` as ``x -> sum(fn(x) * w)`` with ``w`` drawn on first use."""
    cache = {}

    def f(x):
        out = fn(x)
        if "w" not in cache:
            cache["w"] = rng.standard_normal(out.shape)
        return T.tsum(T.mul(out, cache["w"]))

    return f


def _unary(op, low=-2.0, high=2.0, shape=(3, 4)):
    def check(rng):
        x = rng.uniform(low, high, shape)
        return grad_check(_weighted(op, rng), x)

    return check


def _with_other(op, other_shape, x_shape, other_low=-2.0, other_high=2.0, low=-2.0, high=2.0):
    """Check ``op(x, other)`` with respect to both arguments."""

    def check(rng):
        x = rng.uniform(low, high, x_shape)
        o = rng.uniform(other_low, other_high, other_shape)
        e1 = grad_check(_weighted(lambda t: op(t, Tensor(o)), rng), x)
        e2 = grad_check(_weighted(lambda t: op(Tensor(x), t), rng), o)
        return max(e1, e2)

    return check


def _away_from(values, lo, margin=0.1):
    """Push values at least ``margin`` away from the kink at ``lo``."""
    return np.where(np.abs(values - lo) < margin, lo + np.sign(values - lo + 1e-12) * margin, values)


def _clamp_check(rng):
    x = _away_from(rng.uniform(-2, 2, (3, 4)), 0.3)
    return grad_check(_weighted(lambda t: T.clamp_min(t, 0.3), rng), x)


def _abs_check(rng):
    x = _away_from(rng.uniform(-2, 2, (3, 4)), 0.0)
    return grad_check(_weighted(T.abs_, rng), x)


def _getitem_check(rng):
    x = rng.standard_normal((4, 5, 3))
    basic = grad_check(_weighted(lambda t: t[1:3, ::2], rng), x)
    fancy = grad_check(_weighted(lambda t: t[np.array([0, 2, 2]), 1], rng), x)
    return max(basic, fancy)


def _conv_check(stride, padding):
    def check(rng):
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        errs = [
            grad_check(_weighted(lambda t: T.conv2d(t, Tensor(w), Tensor(b), stride, padding), rng), x),
            grad_check(_weighted(lambda t: T.conv2d(Tensor(x), t, Tensor(b), stride, padding), rng), w),
            grad_check(_weighted(lambda t: T.conv2d(Tensor(x), Tensor(w), t, stride, padding), rng), b),
        ]
        return max(errs)

    return check


def _deconv_check(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(2)
    errs = [
        grad_check(_weighted(lambda t: T.deconv2d(t, Tensor(w), Tensor(b), 2, 1), rng), x),
        grad_check(_weighted(lambda t: T.deconv2d(Tensor(x), t, Tensor(b), 2, 1), rng), w),
        grad_check(_weighted(lambda t: T.deconv2d(Tensor(x), Tensor(w), t, 2, 1), rng), b),
    ]
    return max(errs)


def _linear_check(rng):
    x = rng.standard_normal((2, 3, 5))
    w = rng.standard_normal((5, 4))
    b = rng.standard_normal(4)
    errs = [
        grad_check(_weighted(lambda t: T.linear(t, Tensor(w), Tensor(b)), rng), x),
        grad_check(_weighted(lambda t: T.linear(Tensor(x), t, Tensor(b)), rng), w),
        grad_check(_weighted(lambda t: T.linear(Tensor(x), Tensor(w), t), rng), b),
    ]
    return max(errs)


def _layer_norm_check(rng):
    x = rng.standard_normal((2, 3, 6))
    g = rng.uniform(0.5, 1.5, 6)
    b = rng.standard_normal(6)
    errs = [
        grad_check(_weighted(lambda t: T.layer_norm(t, Tensor(g), Tensor(b)), rng), x),
        grad_check(_weighted(lambda t: T.layer_norm(Tensor(x), t, Tensor(b)), rng), g),
        grad_check(_weighted(lambda t: T.layer_norm(Tensor(x), Tensor(g), t), rng), b),
    ]
    return max(errs)


def _concat_check(rng):
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 4))
    e1 = grad_check(_weighted(lambda t: T.concat([t, Tensor(b)], axis=1), rng), a)
    e2 = grad_check(_weighted(lambda t: T.concat([Tensor(a), t], axis=1), rng), b)
    return max(e1, e2)


PRIMITIVES = {
    "identity": _unary(lambda t: t),
    "add": _with_other(T.add, (3, 4), (3, 4)),
    "sub": _with_other(T.sub, (3, 4), (3, 4)),
    "neg": _unary(T.neg),
    "mul": _with_other(T.mul, (3, 4), (3, 4)),
    "div": _with_other(T.div, (3, 4), (3, 4), other_low=0.5, other_high=2.0),
    "power": _unary(lambda t: T.power(t, 3.0), 0.2, 2.0),
    "exp": _unary(T.exp),
    "log": _unary(T.log, 0.2, 3.0),
    "sqrt": _unary(T.sqrt, 0.2, 3.0),
    "clamp_min": _clamp_check,
    "abs": _abs_check,
    "sum": _unary(lambda t: T.tsum(t, axis=1, keepdims=True)),
    "mean": _unary(lambda t: T.mean(t, axis=0)),
    "reshape": _unary(lambda t: T.reshape(t, (2, 6))),
    "permute": _unary(lambda t: T.permute(t, (1, 2, 0)), shape=(2, 3, 4)),
    "expand": _unary(lambda t: T.expand(t, (5, 3, 4)), shape=(1, 3, 4)),
    "bias_add": _with_other(lambda x, b: T.bias_add(x, b, axis=1), (3,), (2, 3, 4)),
    "getitem": _getitem_check,
    "take": _unary(lambda t: T.take(t, np.array([[0, 2], [2, 1]]), axis=0), shape=(3, 4)),
    "concat": _concat_check,
    "pad": _unary(lambda t: T.pad(t, ((1, 0), (0, 2))), shape=(3, 4)),
    "roll": _unary(lambda t: T.roll(t, (1, -2), (0, 1)), shape=(3, 4)),
    "matmul": _with_other(T.matmul, (2, 4, 5), (2, 3, 4)),
    "linear": _linear_check,
    "conv2d": _conv_check(1, 1),
    "conv2d_strided": _conv_check(2, 0),
    "deconv2d": _deconv_check,
    "gelu": _unary(T.gelu, -3.0, 3.0),
    "sigmoid": _unary(T.sigmoid, -4.0, 4.0),
    "softmax": _unary(T.softmax_lastdim, shape=(2, 3, 5)),
    "l2_normalize": _unary(T.l2_normalize, shape=(3, 5)),
    "layer_norm": _layer_norm_check,
    "adaptive_avg_pool": _unary(lambda t: T.adaptive_avg_pool(t, 3, 2), shape=(1, 2, 7, 5)),
    "upsample_bilinear": _unary(lambda t: T.upsample_bilinear(t, 7, 5), shape=(1, 2, 3, 2)),
    "pixel_shuffle": _unary(lambda t: T.pixel_shuffle(t, 2), shape=(1, 8, 2, 3)),
    "pixel_unshuffle": _unary(lambda t: T.pixel_unshuffle(t, 2), shape=(1, 2, 4, 6)),
}


def _param_check(module, name, build, rng, indices=None):
    """Check ``build()`` with respect to the parameter at dotted path ``name``."""
    *path, attr = name.split(".")
    owner = module
    for p in path:
        owner = owner[int(p)] if p.isdigit() else getattr(owner, p)
    orig = getattr(owner, attr)

    def fn(t):
        setattr(owner, attr, t)
        try:
            return build()
        finally:
            setattr(owner, attr, orig)

    return grad_check(_weighted(fn, rng), orig.data, indices=indices, rng=rng)


def _adapter_path(rng):
    from .adapter import HierarchicalAdapter
    from .encoder import EncoderBlock

    dim = 8
    adapter = HierarchicalAdapter(dim, 0.25, rng, scale_init=0.5)
    adapter.up_weight.data[...] = rng.standard_normal(adapter.up_weight.shape) * 0.5
    adapter.up_bias.data[...] = rng.standard_normal(dim) * 0.1
    block = EncoderBlock(dim, 2, 2, True, 2.0, rng, adapter=adapter)
    for p in block.parameters():
        if not p.data.any():
            p.data[...] = rng.standard_normal(p.shape) * 0.1
    x = rng.standard_normal((1, 4, 4, dim))
    xt = Tensor(x)
    errs = [grad_check(_weighted(block, rng), x)]
    for name in ("adapter.down_weight", "adapter.up_weight", "adapter.up_bias", "adapter.scale"):
        errs.append(_param_check(block, name, lambda: block(xt), rng))
    return max(errs)


def _hpf_path(rng):
    from .hpf import HpfConfig, HpfLevel

    level = HpfLevel(HpfConfig(scales=(1, 2, 3), channels=6, mode="both"), rng)
    for p in level.parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.5
    x = rng.standard_normal((1, 6, 4, 4))
    xt = Tensor(x)
    errs = [grad_check(_weighted(level, rng), x)]
    for name, _ in list(level.named_parameters())[:: max(1, len(list(level.named_parameters())) // 4)]:
        errs.append(_param_check(level, name, lambda: level(xt), rng))
    return max(errs)


def _decoder_path(rng):
    from .crf import CrfLevel

    level = CrfLevel(4, 4, 8, 2, 4, 2, rng)
    for p in level.parameters():
        if not p.data.any():
            p.data[...] = rng.standard_normal(p.shape) * 0.1
    level.blocks[0].attn.tau.data[...] = 0.7
    state = rng.standard_normal((1, 4, 4, 4))
    skip = rng.standard_normal((1, 4, 4, 4))
    st, sk = Tensor(state), Tensor(skip)
    errs = [
        grad_check(_weighted(lambda t: level(t, sk), rng), state),
        grad_check(_weighted(lambda t: level(st, t), rng), skip),
    ]
    for name in ("blocks.0.attn.tau", "blocks.1.attn.query_bias", "blocks.0.attn.rel_table", "blocks.1.attn.q.weight"):
        errs.append(_param_check(level, name, lambda: level(st, sk), rng))
    return max(errs)


def _silog_path(rng):
    from .losses import silog_loss

    gt = rng.uniform(0.5, 10.0, (2, 1, 6, 6))
    mask = rng.random(gt.shape) < 0.8
    pred = gt * np.exp(rng.normal(0.0, 0.3, gt.shape))
    return grad_check(lambda t: silog_loss(t, gt, mask), pred)


def _model_path(rng):
    from .config import ModelConfig
    from .model import DepthModel

    cfg = ModelConfig(
        window_size=2, embed_dim=8, decoder_widths=(16, 8, 8, 8), decoder_heads=(2, 2, 2, 2), image_size=32, eval_size=32
    )
    model = DepthModel(cfg)
    for a in model.encoder.adapters():
        a.up_weight.data[...] = rng.standard_normal(a.up_weight.shape) * 0.1
    img = rng.uniform(0, 1, (1, 3, 32, 32))
    return grad_check(_weighted(model, rng), img, indices=24, rng=rng)


COMPOSITES = {
    "path:adapter": _adapter_path,
    "path:hpf": _hpf_path,
    "path:decoder_level": _decoder_path,
    "path:silog": _silog_path,
    "path:model": _model_path,
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def run_suite(seed=0, names=None):
    registry = {**PRIMITIVES, **COMPOSITES}
    results = []
    for name in names or registry:
        rng = np.random.default_rng([seed, sum(name.encode())])
        t0 = time.perf_counter()
        with verification_mode():
            err = float(registry[name](rng))
        results.append(CheckResult(name, err, time.perf_counter() - t0))
    return results


def format_table(results):
    lines = ["name,max_rel_error,status"]
    lines += [f"{r.name},{r.error:.3e},{'pass' if r.passed else 'FAIL'}" for r in results]
    return "\n".join(lines) + "\n"
