"""Window partitioning of token grids and the masks that go with it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, pad, permute, reshape, roll


@dataclass
class WindowPartition:
    windows: Tensor  # (B * num_windows, S*S, C)
    shape: tuple  # original (B, H, W, C)
    pads: tuple  # (pad_h, pad_w) added at the bottom/right
    shift: int
    size: int

    @property
    def grid(self):
        _, H, W, _ = self.shape
        return (H + self.pads[0]) // self.size, (W + self.pads[1]) // self.size


def effective_window(h, w, size, shift):
    """Clamp the window to the grid when the grid fits in one window; no shift then."""
    if min(h, w) <= size:
        return min(h, w), 0
    return size, shift


def window_partition(x, size, shift=0):
    """Split (B, H, W, C) tokens into non-overlapping ``size x size`` windows.

    The grid is zero-padded at the bottom/right to a multiple of ``size`` and,
    for ``shift > 0``, cyclically rolled by ``-shift`` on both axes first.
    """
    if size < 1:
        raise ValueError(f"window size must be >= 1, got {size}")
    B, H, W, C = x.shape
    ph, pw = -H % size, -W % size
    if ph or pw:
        x = pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)))
    if shift:
        x = roll(x, (-shift, -shift), (1, 2))
    nh, nw = (H + ph) // size, (W + pw) // size
    x = reshape(x, (B, nh, size, nw, size, C))
    x = permute(x, (0, 1, 3, 2, 4, 5))
    windows = reshape(x, (B * nh * nw, size * size, C))
    return WindowPartition(windows, (B, H, W, C), (ph, pw), shift, size)


def window_reverse(part, windows=None):
    """Reassemble windows (default: ``part.windows``) into the original token grid."""
    windows = part.windows if windows is None else windows
    B, H, W, _ = part.shape
    C = windows.shape[-1]
    S = part.size
    nh, nw = part.grid
    x = reshape(windows, (B, nh, nw, S, S, C))
    x = permute(x, (0, 1, 3, 2, 4, 5))
    x = reshape(x, (B, nh * S, nw * S, C))
    if part.shift:
        x = roll(x, (part.shift, part.shift), (1, 2))
    if part.pads[0] or part.pads[1]:
        x = x[:, :H, :W, :]
    return x


def _partition_map(m, size, shift):
    if shift:
        m = np.roll(m, (-shift, -shift), (0, 1))
    hp, wp = m.shape
    m = m.reshape(hp // size, size, wp // size, size).transpose(0, 2, 1, 3)
    return m.reshape(-1, size * size)


def attention_mask(h, w, size, shift):
    """Additive (num_windows, S*S, S*S) mask, or None when nothing is masked.

    Blocks attention between tokens that were not neighbours before the
    cyclic shift, and from valid queries to zero-padded keys.
    """
    ph, pw = -h % size, -w % size
    if not shift and not (ph or pw):
        return None
    hp, wp = h + ph, w + pw
    region = np.zeros((hp, wp), dtype=np.int64)
    if shift:
        cuts = (slice(0, -size), slice(-size, -shift), slice(-shift, None))
        label = 0
        for hs in cuts:
            for ws in cuts:
                region[hs, ws] = label
                label += 1
    valid = np.zeros((hp, wp), dtype=bool)
    valid[:h, :w] = True
    # region labels are laid out in the rolled frame; validity is in the original one
    reg = _partition_map(region, size, 0)
    val = _partition_map(valid, size, shift)
    blocked = reg[:, :, None] != reg[:, None, :]
    blocked |= val[:, :, None] & ~val[:, None, :]
    if not blocked.any():
        return None
    return np.where(blocked, -np.inf, 0.0)


def relative_position_index(size, table_size):
    """(S*S, S*S) indices into a ``(2*table_size - 1)**2`` relative-offset table."""
    coords = np.stack(np.meshgrid(np.arange(size), np.arange(size), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (table_size - 1)
    return rel[0] * (2 * table_size - 1) + rel[1]
