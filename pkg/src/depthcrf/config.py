"""Model/training configuration and its flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    # encoder
    window_size: int = 7
    embed_dim: int = 32
    depths: tuple = (2, 2, 2, 2)
    heads: tuple = (1, 2, 4, 8)
    mlp_ratio: float = 4.0
    # ablation switches
    ha_enabled: bool = True
    hp_enabled: bool = True
    fc_enabled: bool = True
    # adapter
    adapter_ratio: float = 0.25
    adapter_scale_init: float = 1e-2
    # hybrid pyramid fusion
    hpf_scales: tuple = (1, 2, 3)
    hpf_mode: str = "both"
    # decoder
    decoder_widths: tuple = (128, 64, 32, 32)
    decoder_heads: tuple = (4, 4, 2, 2)
    decoder_mlp_ratio: float = 2.0
    tau_init: float = 1.0
    max_depth: float = 10.0
    min_depth: float = 1e-3
    # loss
    silog_lambda: float = 0.85
    silog_alpha: float = 10.0
    # optimisation
    lr_start: float = 2e-5
    lr_end: float = 1e-5
    batch_size: int = 4
    epochs: int = 30
    max_steps: int = 0
    flip: bool = False
    # data
    num_samples: int = 8
    image_size: int = 64
    eval_size: int = 96
    eval_samples: int = 4
    eval_every: int = 1
    num_rects: int = 3
    num_spheres: int = 2
    near: float = 0.5
    far: float = 10.0
    texture: float = 0.5
    fog: float = 0.5
    train_manifest: str = ""
    # seeds
    seed: int = 0
    data_seed: int = 0
    shuffle_seed: int = 0

    def __post_init__(self):
        validate(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def stage_dims(self):
        return tuple(self.embed_dim * 2**i for i in range(len(self.depths)))


def validate(cfg):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.window_size >= 1, "window_size must be >= 1")
    need(len(cfg.depths) == 4 and len(cfg.heads) == 4, "depths and heads need four stages")
    need(all(d >= 1 for d in cfg.depths), "stage depths must be >= 1")
    for dim, h in zip(cfg.stage_dims(), cfg.heads):
        need(h >= 1 and dim % h == 0, f"stage width {dim} not divisible by {h} heads")
    need(len(cfg.decoder_widths) == 4 and len(cfg.decoder_heads) == 4, "decoder needs four levels")
    for dim, h in zip(cfg.decoder_widths, cfg.decoder_heads):
        need(h >= 1 and dim % h == 0, f"decoder width {dim} not divisible by {h} heads")
    need(0 < cfg.adapter_ratio <= 1, "adapter_ratio must be in (0, 1]")
    scales = cfg.hpf_scales
    need(len(scales) >= 1 and scales[0] >= 1, "hpf_scales must be >= 1")
    need(all(a < b for a, b in zip(scales, scales[1:])), "hpf_scales must be strictly increasing")
    need(cfg.hpf_mode in ("both", "msf", "baf"), "hpf_mode must be one of both, msf, baf")
    need(cfg.max_depth > 0 and 0 < cfg.min_depth < cfg.max_depth, "need 0 < min_depth < max_depth")
    need(0 <= cfg.silog_lambda <= 1, "silog_lambda must be in [0, 1]")
    need(cfg.silog_alpha > 0, "silog_alpha must be positive")
    need(cfg.lr_start > 0 and cfg.lr_end > 0, "learning rates must be positive")
    need(cfg.batch_size >= 1 and cfg.epochs >= 1 and cfg.max_steps >= 0, "invalid batch/epoch/step counts")
    need(cfg.image_size % 32 == 0 and cfg.eval_size % 32 == 0, "image sizes must be multiples of 32")
    need(cfg.num_samples >= 1 and cfg.eval_samples >= 0, "invalid sample counts")
    need(cfg.eval_every >= 1, "eval_every must be >= 1")
    need(0 < cfg.near < cfg.far, "need 0 < near < far")
    need(0 <= cfg.texture <= 1 and 0 <= cfg.fog <= 1, "texture and fog must be in [0, 1]")
    need(cfg.tau_init > 0, "tau_init must be positive")


# --- text format -------------------------------------------------------------

_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def _parse_bool(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_value(key, raw):
    typ = _TYPES[key]
    default = getattr(ModelConfig, key)
    try:
        if typ == "bool":
            return _parse_bool(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "tuple":
            conv = float if any(isinstance(v, float) for v in default) else int
            return tuple(conv(v) for v in raw.replace(" ", "").split(",") if v)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text, base=None):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    base = base or ModelConfig()
    return base.replace(**values)


def format_config(cfg):
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# Desk-scale overfit preset: window 4, full batch, head range strictly above the farthest scene depth.
OVERFIT = dict(window_size=4, batch_size=8, max_depth=12.0, lr_start=2e-3, lr_end=3e-4, epochs=2000,
               max_steps=2000, eval_every=2000)
OUTDOOR = dict(max_depth=80.0, far=80.0)
