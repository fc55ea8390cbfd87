"""PPM/PGM (8-bit) and PFM (32-bit float) readers and writers."""

from __future__ import annotations

import numpy as np

from ..errors import FormatError


class _Header:
    """Whitespace-separated header tokens with ``#`` comments, tracking byte offsets."""

    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def token(self, what):
        buf, n = self.buf, len(self.buf)
        while self.pos < n:
            ch = buf[self.pos : self.pos + 1]
            if ch == b"#":
                while self.pos < n and buf[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif ch.isspace():
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < n and not buf[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if start == self.pos:
            raise FormatError(f"missing {what} in header", start)
        return buf[start : self.pos].decode("ascii", "replace"), start

    def integer(self, what):
        tok, at = self.token(what)
        try:
            val = int(tok)
        except ValueError:
            raise FormatError(f"{what} is not an integer: {tok!r}", at) from None
        if val <= 0:
            raise FormatError(f"{what} must be positive, got {val}", at)
        return val

    def end(self):
        """Consume the single whitespace byte that terminates the header."""
        if self.pos >= len(self.buf) or not self.buf[self.pos : self.pos + 1].isspace():
            raise FormatError("header not terminated by whitespace", self.pos)
        self.pos += 1
        return self.pos


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _payload(buf, start, nbytes, what):
    if len(buf) - start < nbytes:
        raise FormatError(f"truncated {what}: expected {nbytes} bytes, found {len(buf) - start}", len(buf))
    return buf[start : start + nbytes]


def save_ppm(path, rgb):
    """Write (3, H, W) values in [0, 1] as binary P6 with maxval 255."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {rgb.shape}")
    _, h, w = rgb.shape
    q = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.transpose(1, 2, 0).tobytes())


def load_ppm(path):
    """Read a binary P6 file into (3, H, W) float32 in [0, 1]."""
    buf = _read(path)
    hdr = _Header(buf)
    magic, at = hdr.token("magic")
    if magic != "P6":
        raise FormatError(f"not a binary PPM (magic {magic!r})", at)
    w = hdr.integer("width")
    h = hdr.integer("height")
    maxval = hdr.integer("maxval")
    if maxval > 255:
        raise FormatError(f"only 8-bit PPM supported, maxval {maxval}", hdr.pos)
    start = hdr.end()
    data = np.frombuffer(_payload(buf, start, w * h * 3, "PPM payload"), dtype=np.uint8)
    return (data.reshape(h, w, 3).transpose(2, 0, 1) / float(maxval)).astype(np.float32)


def save_pgm(path, gray):
    """Write (H, W) values in [0, 1] as binary P5."""
    gray = np.asarray(gray)
    h, w = gray.shape
    q = np.round(np.clip(gray, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def load_pgm(path):
    buf = _read(path)
    hdr = _Header(buf)
    magic, at = hdr.token("magic")
    if magic != "P5":
        raise FormatError(f"not a binary PGM (magic {magic!r})", at)
    w = hdr.integer("width")
    h = hdr.integer("height")
    maxval = hdr.integer("maxval")
    start = hdr.end()
    data = np.frombuffer(_payload(buf, start, w * h, "PGM payload"), dtype=np.uint8)
    return (data.reshape(h, w) / float(maxval)).astype(np.float32)


def save_pfm(path, depth):
    """Write a single-channel map as little-endian ``Pf`` (scale -1), bottom row first."""
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim == 3 and depth.shape[0] == 1:
        depth = depth[0]
    if depth.ndim != 2:
        raise ValueError(f"expected (H, W) or (1, H, W) depth, got {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(depth).astype("<f4").tobytes())


def load_pfm(path):
    """Read ``Pf`` (H, W) or ``PF`` (3, H, W) as float32; the scale sign selects endianness."""
    buf = _read(path)
    hdr = _Header(buf)
    magic, at = hdr.token("magic")
    if magic not in ("Pf", "PF"):
        raise FormatError(f"not a PFM file (magic {magic!r})", at)
    channels = 3 if magic == "PF" else 1
    w = hdr.integer("width")
    h = hdr.integer("height")
    tok, at = hdr.token("scale")
    try:
        scale = float(tok)
    except ValueError:
        raise FormatError(f"scale is not a number: {tok!r}", at) from None
    if scale == 0:
        raise FormatError("scale must be nonzero", at)
    start = hdr.end()
    dtype = "<f4" if scale < 0 else ">f4"
    raw = np.frombuffer(_payload(buf, start, w * h * channels * 4, "PFM payload"), dtype=dtype)
    img = np.flipud(raw.reshape(h, w, channels)).astype(np.float32)
    return img[:, :, 0].copy() if channels == 1 else img.transpose(2, 0, 1).copy()
