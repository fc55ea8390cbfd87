"""Scale-invariant log loss and depth evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EvaluationError
from .tensor import Tensor, add, clamp_min, div, log, mean, mul, reshape, sqrt, sub, take


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.85
    alpha: float = 10.0
    min_depth: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"variance factor must lie in [0, 1], got {self.lam}")
        if self.alpha <= 0:
            raise ValueError(f"loss scale must be positive, got {self.alpha}")


def valid_mask(gt, min_depth=1e-3, max_depth=np.inf):
    gt = np.asarray(gt)
    return (gt > min_depth) & (gt < max_depth)


def silog_loss(pred, gt, mask, cfg=LossConfig()):
    """``alpha * sqrt(mean(d^2) - lam * mean(d)^2)`` with ``d = log(pred / gt)`` over masked pixels.

    Evaluated as ``var(d) + (1 - lam) * mean(d)^2`` under the root. The
    variance uses the shifted-data form ``mean(e^2) - mean(e)^2`` with
    ``e = d - d_0`` for a sample value ``d_0``, so a constant ``d`` (a pure
    rescaling of ``gt``) gives a variance of exactly zero.
    """
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt)
    idx = np.flatnonzero(np.asarray(mask, dtype=bool).ravel())
    if idx.size == 0:
        raise EvaluationError("silog_loss: no valid pixels")
    p = take(reshape(pred, (-1,)), idx)
    # predictions below min_depth are clamped so log stays finite
    d = log(div(clamp_min(p, cfg.min_depth), gt.ravel()[idx].astype(p.dtype)))
    e = sub(d, d.data[0])
    me = mean(e)
    v = clamp_min(sub(mean(mul(e, e)), mul(me, me)), 0.0)
    if cfg.lam != 1.0:
        m = mean(d)
        v = add(v, mul(mul(m, m), 1.0 - cfg.lam))
    return mul(sqrt(v), cfg.alpha)


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    log_rmse: float
    d1: float
    d2: float
    d3: float
    k: int

    CSV_HEADER = "abs_rel,sq_rel,rmse,log_rmse,d1,d2,d3,k"

    def as_dict(self):
        return asdict(self)

    def to_text(self):
        # shortest round-tripping repr, so from_text(to_text(r)) == r
        return "".join(f"{k}={v!r}\n" for k, v in self.as_dict().items())

    def to_csv_row(self):
        return ",".join(_fmt(v) for v in self.as_dict().values())

    @classmethod
    def from_text(cls, text):
        vals = dict(line.split("=", 1) for line in text.split() if "=" in line)
        return cls(**{k: (int(v) if k == "k" else float(v)) for k, v in vals.items()})


def _fmt(v):
    return str(v) if isinstance(v, int) else f"{v:.9g}"


def eval_metrics(pred, gt, mask=None, caps=(1e-3, 10.0)):
    """Standard depth metrics over masked pixels, after clamping pred and gt into ``caps``."""
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if mask is None:
        mask = valid_mask(gt, caps[0], caps[1])
    mask = np.asarray(mask, dtype=bool)
    k = int(mask.sum())
    if k == 0:
        raise EvaluationError("eval_metrics: no valid pixels")
    d = np.clip(pred[mask], caps[0], caps[1])
    g = np.clip(gt[mask], caps[0], caps[1])
    err = d - g
    ratio = np.maximum(d / g, g / d)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err**2 / g)),
        rmse=float(math.sqrt(np.mean(err**2))),
        log_rmse=float(math.sqrt(np.mean((np.log(d) - np.log(g)) ** 2))),
        d1=float(np.mean(ratio < 1.25)),
        d2=float(np.mean(ratio < 1.25**2)),
        d3=float(np.mean(ratio < 1.25**3)),
        k=k,
    )
