"""The assembled depth network: encoder, optional fusion, CRF decoder."""

from __future__ import annotations

import numpy as np

from .crf import CrfDecoder
from .encoder import Encoder
from .hpf import HybridPyramidFusion, hpf_forward
from .nn import Module
from .tensor import Tensor


def _stream(seed, k):
    return np.random.default_rng([seed, k])


class DepthModel(Module):
    """Image (B, 3, H, W) in [0, 1] -> depth (B, 1, H, W) in (0, max_depth).

    Each component initialises from its own RNG stream so toggling one
    ablation switch leaves every other parameter unchanged.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        dims = cfg.stage_dims()
        self.encoder = Encoder(cfg, _stream(cfg.seed, 0), _stream(cfg.seed, 1))
        self.fusion = HybridPyramidFusion(dims, cfg.hpf_scales, cfg.hpf_mode, _stream(cfg.seed, 2)) if cfg.hp_enabled else None
        self.decoder = CrfDecoder(cfg, dims, _stream(cfg.seed, 3))

    def features(self, img):
        return hpf_forward(self.encoder(img), self.fusion, self.cfg.hp_enabled)

    def forward(self, img):
        if not isinstance(img, Tensor):
            img = Tensor(img)
        return self.decoder(self.features(img))

    def after_step(self):
        """Project constrained parameters back to their feasible set."""
        self.decoder.clamp_()

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} vs model {p.shape}")
            p.data[...] = arr
