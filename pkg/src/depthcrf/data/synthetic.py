"""Procedural RGB-D scenes: a tilted background plane, fronto-parallel boxes and spheres."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import ConfigError, FormatError

_LIGHT = np.array([-0.4, -0.5, -0.77])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    rects: int = 3
    spheres: int = 2
    near: float = 0.5
    far: float = 10.0
    texture: float = 0.5
    fog: float = 0.5
    size: int = 64

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ConfigError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if not 0 <= self.texture <= 1 or not 0 <= self.fog <= 1:
            raise ConfigError("texture and fog must lie in [0, 1]")
        if self.rects < 0 or self.spheres < 0:
            raise ConfigError("shape counts must be nonnegative")
        if self.size < 32 or self.size % 32:
            raise ConfigError(f"size must be a positive multiple of 32, got {self.size}")

    def to_line(self):
        return " ".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))

    @classmethod
    def from_line(cls, line):
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for tok in line.split():
            key, sep, val = tok.partition("=")
            if not sep or key not in types:
                raise ConfigError(f"bad scene field {tok!r}")
            kw[key] = int(val) if types[key] in ("int", int) else float(val)
        return cls(**kw)


@dataclass
class DepthSample:
    rgb: np.ndarray  # (3, H, W) in [0, 1]
    depth: np.ndarray  # (1, H, W) metres
    mask: np.ndarray  # (1, H, W) bool


def plane_coefficients(spec):
    """Inverse-depth plane ``1/d = a + b*v + c*u`` over normalised pixel coords in [0, 1]."""
    rng = np.random.default_rng([spec.seed, 0])
    span = spec.far - spec.near
    d_top = spec.far - rng.uniform(0.0, 0.1) * span
    d_bottom = spec.near + rng.uniform(0.25, 0.45) * span
    a = 1.0 / d_top
    b = 1.0 / d_bottom - a
    c = rng.uniform(-0.2, 0.2) * b
    if c < 0:
        a -= c  # keep the right-hand edge no farther than d_top
    return a, b, c


def plane_depth(spec):
    a, b, c = plane_coefficients(spec)
    n = spec.size
    v, u = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")
    return 1.0 / (a + b * v + c * u)


def gen_synthetic_scene(spec):
    """Render ``spec`` deterministically; every call with the same spec is bit-identical."""
    n = spec.size
    rng = np.random.default_rng([spec.seed, 1])
    focal = float(n)
    span = spec.far - spec.near
    vv, uu = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")

    depth = plane_depth(spec)
    obj = np.zeros((n, n), dtype=np.int64)
    shade = np.ones((n, n))
    colors = [rng.uniform(0.3, 0.9, 3)]
    ref_depth = [float(depth.mean())]
    phases = [rng.uniform(0, 2 * np.pi, 3)]

    for _ in range(spec.rects):
        d = spec.near + rng.uniform(0.1, 0.6) * span
        w, h = rng.uniform(0.4, 1.2, 2) * focal / d
        cx, cy = rng.uniform(0, n, 2)
        hit = (np.abs(uu - cx) <= w / 2) & (np.abs(vv - cy) <= h / 2) & (d < depth)
        depth = np.where(hit, d, depth)
        obj = np.where(hit, len(colors), obj)
        shade = np.where(hit, 1.0, shade)
        colors.append(rng.uniform(0.1, 1.0, 3))
        ref_depth.append(d)
        phases.append(rng.uniform(0, 2 * np.pi, 3))

    for _ in range(spec.spheres):
        dc = spec.near + rng.uniform(0.15, 0.6) * span
        radius = rng.uniform(0.15, 0.35) * dc * 0.5
        cx, cy = rng.uniform(0, n, 2)
        px, py = (uu - cx) * dc / focal, (vv - cy) * dc / focal
        rho2 = px * px + py * py
        inside = rho2 < radius * radius
        dz = np.sqrt(np.where(inside, radius * radius - rho2, 0.0))
        d = dc - dz
        hit = inside & (d < depth)
        depth = np.where(hit, d, depth)
        obj = np.where(hit, len(colors), obj)
        normal = np.stack([px, py, -dz]) / radius
        lambert = 0.25 + 0.75 * np.clip(-(np.tensordot(_LIGHT, normal, axes=1)), 0.0, 1.0)
        shade = np.where(hit, lambert, shade)
        colors.append(rng.uniform(0.1, 1.0, 3))
        ref_depth.append(dc)
        phases.append(rng.uniform(0, 2 * np.pi, 3))

    colors = np.array(colors)
    ref_depth = np.array(ref_depth)
    phases = np.array(phases)

    def attenuate(d):
        return 1.0 - spec.fog * np.clip((d - spec.near) / span, 0.0, 1.0)

    flat = attenuate(ref_depth)[obj]
    stripes = 0.5 + 0.5 * np.sin(uu[None] * 0.9 + vv[None] * 0.6 + phases[obj].transpose(2, 0, 1))
    detailed = attenuate(depth) * shade
    t = spec.texture
    rgb = colors[obj].transpose(2, 0, 1) * ((1 - t) * flat + t * detailed * (0.7 + 0.3 * stripes))
    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    depth = depth.astype(np.float32)[None]
    mask = (depth > 0) & np.isfinite(depth)
    return DepthSample(rgb, depth, mask)


def read_manifest(path):
    specs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                specs.append(SceneSpec.from_line(line))
            except (ConfigError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return specs


def write_manifest(path, specs):
    with open(path, "w", encoding="utf-8") as fh:
        for s in specs:
            fh.write(s.to_line() + "\n")
