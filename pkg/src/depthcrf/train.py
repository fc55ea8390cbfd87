"""Deterministic training loop.

Everything that varies between steps (batch order, flips, learning rate) is a
pure function of the config and the global step, so a run resumed from a
checkpoint continues exactly as the uninterrupted run would have.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import from_training, restore_model, save_checkpoint
from .data import epoch_batches, read_manifest, render_all, specs_from_config
from .errors import NumericError
from .losses import LossConfig, MetricReport, eval_metrics, silog_loss
from .model import DepthModel
from .optim import Adam, linear_lr
from .tensor import no_grad

LOG_HEADER = "epoch,step,loss,lr," + MetricReport.CSV_HEADER
EVAL_SEED_OFFSET = 50000


@dataclass
class EpochRecord:
    epoch: int
    step: int  # global step count at the end of the epoch
    loss: float  # mean training loss over the epoch's steps
    lr: float  # learning rate of the epoch's last step
    metrics: MetricReport | None = None

    def to_csv_row(self):
        m = self.metrics.to_csv_row() if self.metrics else "," * (len(MetricReport.CSV_HEADER.split(",")) - 1)
        return f"{self.epoch},{self.step},{self.loss:.8g},{self.lr:.8g},{m}"


@dataclass
class TrainResult:
    model: DepthModel
    optimizer: Adam
    step: int
    losses: list = field(default_factory=list)  # per-step losses of this run
    epochs: list = field(default_factory=list)  # EpochRecord per (possibly partial) epoch


def loss_config(cfg):
    return LossConfig(lam=cfg.silog_lambda, alpha=cfg.silog_alpha, min_depth=cfg.min_depth)


def training_specs(cfg):
    if cfg.train_manifest:
        return read_manifest(cfg.train_manifest)
    return specs_from_config(cfg)


def eval_specs(cfg):
    return specs_from_config(cfg, count=cfg.eval_samples, size=cfg.eval_size, seed_offset=EVAL_SEED_OFFSET)


def steps_per_epoch(cfg, n_samples):
    return -(-n_samples // cfg.batch_size)


def total_steps(cfg, n_samples):
    total = cfg.epochs * steps_per_epoch(cfg, n_samples)
    return min(total, cfg.max_steps) if cfg.max_steps else total


def predict(model, rgb, batch=4):
    """Inference over a stack of images without recording a tape."""
    with no_grad():
        return np.concatenate([model(rgb[i : i + batch]).data for i in range(0, len(rgb), batch)])


def evaluate(model, samples, batch=4):
    rgb = np.stack([s.rgb for s in samples])
    gt = np.stack([s.depth for s in samples])
    mask = np.stack([s.mask for s in samples])
    pred = predict(model, rgb, batch)
    cfg = model.cfg
    return eval_metrics(pred, gt, mask, caps=(cfg.min_depth, cfg.max_depth))


def _dump_nonfinite(out_dir, step, epoch, batch, specs, loss):
    lines = [f"non-finite loss {loss!r} at step {step} (epoch {epoch})"]
    for i, flipped in zip(batch.indices, batch.flipped):
        scene = specs[i].to_line() if i < len(specs) else "(caller-supplied sample)"
        lines.append(f"sample {i} flipped={flipped} {scene}")
    text = "\n".join(lines) + "\n"
    if out_dir:
        path = os.path.join(out_dir, f"nonfinite_step{step}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def train(cfg, out_dir=None, resume=None, samples=None, specs=None, log=None, checkpoint_every=0):
    """Train from scratch, or continue from ``resume`` (a loaded Checkpoint).

    ``samples`` overrides the rendered training set. When ``out_dir`` is given
    the per-epoch CSV log and the final checkpoint are written there.
    """
    if resume is not None:
        cfg = resume.config
    if samples is None:
        specs = training_specs(cfg) if specs is None else specs
        samples = render_all(specs)
    held_out = render_all(eval_specs(cfg)) if cfg.eval_samples else []

    if resume is not None:
        model = restore_model(resume)
        opt = Adam(model.named_parameters())
        state = resume.optimizer_state()
        if state is not None:
            opt.load_state(resume.step, *state)
        start = resume.step
    else:
        model = DepthModel(cfg)
        opt = Adam(model.named_parameters())
        start = 0

    lcfg = loss_config(cfg)
    spe = steps_per_epoch(cfg, len(samples))
    total = total_steps(cfg, len(samples))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.csv")
        if resume is None or not os.path.exists(log_path):
            with open(log_path, "w", encoding="utf-8") as fh:
                fh.write(LOG_HEADER + "\n")

    result = TrainResult(model, opt, start)
    epoch_losses = []
    batches, batches_epoch = None, -1
    for step in range(start, total):
        epoch, pos = divmod(step, spe)
        if epoch != batches_epoch:
            batches = epoch_batches(samples, cfg.batch_size, cfg.shuffle_seed, epoch, cfg.flip)
            batches_epoch = epoch
        batch = batches[pos]
        lr = linear_lr(step, total, cfg.lr_start, cfg.lr_end)

        pred = model(batch.rgb)
        loss = silog_loss(pred, batch.depth, batch.mask, lcfg)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(_dump_nonfinite(out_dir, step, epoch, batch, specs or [], value))
        model.zero_grad()
        loss.backward()
        opt.step(lr)
        model.after_step()

        result.losses.append(value)
        epoch_losses.append(value)
        result.step = step + 1
        if checkpoint_every and out_dir and result.step % checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"step{result.step}.ckpt"), from_training(model, result.step, opt))

        if pos == spe - 1 or step == total - 1:
            metrics = None
            if held_out and ((epoch + 1) % cfg.eval_every == 0 or step == total - 1):
                metrics = evaluate(model, held_out, cfg.batch_size)
            rec = EpochRecord(epoch, result.step, float(np.mean(epoch_losses)), lr, metrics)
            result.epochs.append(rec)
            epoch_losses = []
            if out_dir:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(rec.to_csv_row() + "\n")
            if log:
                log(rec)

    if out_dir:
        save_checkpoint(os.path.join(out_dir, "model.ckpt"), from_training(model, result.step, opt))
    return result
