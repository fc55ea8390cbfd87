"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     8 bytes  b"DCRFCKPT"
    version   u32
    step      u64      global optimizer step
    config    u32 length + UTF-8 text in ``key = value`` form
    count     u32      number of array entries
    entries   count x (u16 name length, name, u8 dtype code, u8 ndim,
                       ndim x u32 dims, u64 payload offset, u64 payload bytes)
    payloads  raw little-endian arrays, in entry order

Model parameters are stored under ``param/<name>``; optimizer moments under
``opt/m/<name>`` and ``opt/v/<name>``. Saving the result of a load reproduces
the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import format_config, parse_config
from .errors import FormatError

MAGIC = b"DCRFCKPT"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    config_text: str
    step: int
    arrays: dict = field(default_factory=dict)

    @property
    def config(self):
        return parse_config(self.config_text)

    def params(self):
        return {k[len("param/") :]: v for k, v in self.arrays.items() if k.startswith("param/")}

    def optimizer_state(self):
        """``(m, v)`` dicts, or None when no optimizer state was saved."""
        m = {k[len("opt/m/") :]: a for k, a in self.arrays.items() if k.startswith("opt/m/")}
        v = {k[len("opt/v/") :]: a for k, a in self.arrays.items() if k.startswith("opt/v/")}
        return (m, v) if m else None


def from_training(model, step, optimizer=None):
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        _, m, v = optimizer.state()
        arrays.update({f"opt/m/{k}": a for k, a in m.items()})
        arrays.update({f"opt/v/{k}": a for k, a in v.items()})
    return Checkpoint(format_config(model.cfg), int(step), arrays)


def to_bytes(ckpt):
    names = list(ckpt.arrays)
    if len(set(names)) != len(names):
        raise ValueError("duplicate entry names")
    cfg = ckpt.config_text.encode("utf-8")
    header = [MAGIC, struct.pack("<IQ", VERSION, ckpt.step), struct.pack("<I", len(cfg)), cfg]
    header.append(struct.pack("<I", len(names)))
    arrays = []
    for name in names:
        a = np.asarray(ckpt.arrays[name])
        dt = a.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise ValueError(f"{name}: unsupported dtype {a.dtype}")
        arrays.append(np.ascontiguousarray(a, dtype=dt))
    entry_sizes = [2 + len(n.encode("utf-8")) + 2 + 4 * a.ndim + 16 for n, a in zip(names, arrays)]
    offset = sum(len(h) for h in header) + sum(entry_sizes)
    for name, a in zip(names, arrays):
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack("<BB", _CODES[a.dtype], a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        header.append(struct.pack("<QQ", offset, a.nbytes))
        offset += a.nbytes
    return b"".join(header) + b"".join(a.tobytes() for a in arrays)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", len(self.buf))
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(buf):
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a checkpoint (bad magic)", 0)
    at = r.pos
    version, step = r.unpack("<IQ", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", at)
    (n,) = r.unpack("<I", "config length")
    at = r.pos
    try:
        config_text = r.take(n, "config").decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("config text is not UTF-8", at) from None
    (count,) = r.unpack("<I", "entry count")
    entries = []
    for _ in range(count):
        (ln,) = r.unpack("<H", "name length")
        name = r.take(ln, "name").decode("utf-8", "replace")
        at = r.pos
        code, ndim = r.unpack("<BB", "dtype")
        if code not in _DTYPES:
            raise FormatError(f"{name}: unknown dtype code {code}", at)
        shape = r.unpack(f"<{ndim}I", "shape")
        offset, nbytes = r.unpack("<QQ", "payload extent")
        entries.append((name, _DTYPES[code], shape, offset, nbytes, at))
    arrays = {}
    for name, dt, shape, offset, nbytes, at in entries:
        if name in arrays:
            raise FormatError(f"duplicate entry {name!r}", at)
        if nbytes != dt.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"{name}: payload size {nbytes} does not match shape {shape}", at)
        if offset + nbytes > len(buf):
            raise FormatError(f"{name}: payload runs past end of file", len(buf))
        arrays[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=offset).reshape(shape).copy()
    return Checkpoint(config_text, int(step), arrays)


def save_checkpoint(path, ckpt):
    data = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def restore_model(ckpt):
    """Build a model from the checkpoint's config and load its weights."""
    from .model import DepthModel

    model = DepthModel(ckpt.config)
    try:
        model.load_state_dict(ckpt.params())
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint weights do not match its config: {exc}") from None
    return model
