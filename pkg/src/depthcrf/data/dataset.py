"""Deterministic batching over synthetic samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthetic import SceneSpec, gen_synthetic_scene

DEFAULT_BATCH = 4


@dataclass
class Batch:
    rgb: np.ndarray  # (B, 3, H, W)
    depth: np.ndarray  # (B, 1, H, W)
    mask: np.ndarray  # (B, 1, H, W) bool
    indices: tuple  # sample indices in the source list
    flipped: tuple  # per-sample horizontal flip flags


def hflip(sample_array):
    """Mirror the last (width) axis."""
    return sample_array[..., ::-1]


def specs_from_config(cfg, count=None, size=None, seed_offset=0):
    count = cfg.num_samples if count is None else count
    size = cfg.image_size if size is None else size
    return [
        SceneSpec(
            seed=cfg.data_seed * 100003 + seed_offset + i,
            rects=cfg.num_rects,
            spheres=cfg.num_spheres,
            near=cfg.near,
            far=cfg.far,
            texture=cfg.texture,
            fog=cfg.fog,
            size=size,
        )
        for i in range(count)
    ]


def render_all(specs):
    return [gen_synthetic_scene(s) for s in specs]


def epoch_order(n, shuffle_seed, epoch):
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def epoch_batches(samples, batch=DEFAULT_BATCH, shuffle_seed=0, epoch=0, flip=False):
    """The batches of one epoch, a pure function of (samples, seeds, epoch)."""
    if batch < 1:
        raise ValueError(f"batch size must be >= 1, got {batch}")
    order = epoch_order(len(samples), shuffle_seed, epoch)
    flips = np.random.default_rng([shuffle_seed, epoch, 1]).random(len(samples)) < 0.5 if flip else np.zeros(len(samples), bool)
    out = []
    for start in range(0, len(order), batch):
        idx = order[start : start + batch]
        rgb, depth, mask = [], [], []
        for i in idx:
            s = samples[i]
            f = flips[i]
            rgb.append(hflip(s.rgb) if f else s.rgb)
            depth.append(hflip(s.depth) if f else s.depth)
            mask.append(hflip(s.mask) if f else s.mask)
        out.append(
            Batch(
                np.ascontiguousarray(np.stack(rgb)),
                np.ascontiguousarray(np.stack(depth)),
                np.ascontiguousarray(np.stack(mask)),
                tuple(int(i) for i in idx),
                tuple(bool(flips[i]) for i in idx),
            )
        )
    return out


def dataset_iter(samples, batch=DEFAULT_BATCH, shuffle_seed=0, flip=False, start_epoch=0):
    """Endless stream of ``(epoch, Batch)`` pairs."""
    epoch = start_epoch
    while True:
        for b in epoch_batches(samples, batch, shuffle_seed, epoch, flip):
            yield epoch, b
        epoch += 1
