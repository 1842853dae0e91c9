"""Window partitioning, cyclic shift and shifted-window masks.

Windows are ordered row-major over the padded map and tokens inside a window
are flattened row-major. Padding is zeros on the bottom/right. Functions take
``[H, W, C]`` or ``[B, H, W, C]`` inputs, either numpy arrays or Tensors, and
return the same kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

MASK_NEG = -1e9


@dataclass(frozen=True)
class WindowGrid:
    H: int
    W: int
    w: int

    def __post_init__(self):
        if self.w < 1:
            raise ConfigError(f"window size must be >= 1, got {self.w}")
        if self.H < 1 or self.W < 1:
            raise ConfigError(f"map extents must be positive, got {self.H}x{self.W}")

    @property
    def nh(self) -> int:
        return -(-self.H // self.w)

    @property
    def nw(self) -> int:
        return -(-self.W // self.w)

    @property
    def n_windows(self) -> int:
        return self.nh * self.nw

    @property
    def pad_h(self) -> int:
        return self.nh * self.w - self.H

    @property
    def pad_w(self) -> int:
        return self.nw * self.w - self.W

    @property
    def Hp(self) -> int:
        return self.H + self.pad_h

    @property
    def Wp(self) -> int:
        return self.W + self.pad_w

    @property
    def tokens(self) -> int:
        return self.w * self.w

    def origins(self) -> np.ndarray:
        """Top-left token ``(x, y)`` of every window, shape ``[n_windows, 2]``."""
        ys, xs = np.meshgrid(np.arange(self.nh) * self.w, np.arange(self.nw) * self.w, indexing="ij")
        return np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)

    def centers(self) -> np.ndarray:
        return self.origins() + (self.w - 1) / 2.0

    def relative_coords(self) -> np.ndarray:
        """In-window token offsets from the window centre, ``[w*w, 2]`` as (x, y)."""
        r = np.arange(self.w) - (self.w - 1) / 2.0
        ys, xs = np.meshgrid(r, r, indexing="ij")
        return np.stack([xs.ravel(), ys.ravel()], axis=-1)

    def token_coords(self) -> np.ndarray:
        """Default sample coordinates ``[n_windows, w*w, 2]`` (integer-valued)."""
        return self.centers()[:, None, :] + self.relative_coords()[None, :, :]


def _to_tensor(x):
    if isinstance(x, Tensor):
        return x, True
    return Tensor(np.asarray(x)), False


def _out(t: Tensor, was_tensor: bool):
    return t if was_tensor else t.data


def partition_windows(x, w: int):
    """Split a map into ``w x w`` windows.

    Returns ``(windows, grid)`` with windows shaped ``[n_windows, w*w, C]``
    (or ``[B, n_windows, w*w, C]`` for batched input).
    """
    if int(w) < 1:
        raise ConfigError(f"window size must be >= 1, got {w}")
    t, was_tensor = _to_tensor(x)
    squeeze = t.ndim == 3
    if squeeze:
        t = ad.reshape(t, (1,) + t.shape)
    if t.ndim != 4:
        raise DimensionError(f"partition_windows: expected [H, W, C] or [B, H, W, C], got {t.shape}")
    B, H, W, C = t.shape
    grid = WindowGrid(H, W, int(w))
    t = ad.pad_spatial(t, grid.pad_h, grid.pad_w)
    t = ad.reshape(t, (B, grid.nh, grid.w, grid.nw, grid.w, C))
    t = ad.transpose(t, (0, 1, 3, 2, 4, 5))
    t = ad.reshape(t, (B, grid.n_windows, grid.tokens, C))
    if squeeze:
        t = ad.reshape(t, t.shape[1:])
    return _out(t, was_tensor), grid


def merge_windows(windows, grid: WindowGrid):
    """Inverse of :func:`partition_windows`, including the padding crop."""
    t, was_tensor = _to_tensor(windows)
    squeeze = t.ndim == 3
    if squeeze:
        t = ad.reshape(t, (1,) + t.shape)
    if t.ndim != 4 or t.shape[1] != grid.n_windows or t.shape[2] != grid.tokens:
        raise DimensionError(
            f"merge_windows: windows {windows.shape} inconsistent with grid "
            f"({grid.n_windows} windows of {grid.tokens} tokens)")
    B, C = t.shape[0], t.shape[3]
    t = ad.reshape(t, (B, grid.nh, grid.nw, grid.w, grid.w, C))
    t = ad.transpose(t, (0, 1, 3, 2, 4, 5))
    t = ad.reshape(t, (B, grid.Hp, grid.Wp, C))
    if grid.pad_h or grid.pad_w:
        t = ad.getitem(t, (slice(None), slice(0, grid.H), slice(0, grid.W)))
    if squeeze:
        t = ad.reshape(t, t.shape[1:])
    return _out(t, was_tensor)


def cyclic_shift(x, dy: int, dx: int):
    """Toroidal roll of the spatial axes by ``(dy, dx)`` tokens."""
    t, was_tensor = _to_tensor(x)
    if t.ndim not in (3, 4):
        raise DimensionError(f"cyclic_shift: expected [H, W, C] or [B, H, W, C], got {t.shape}")
    if dy == 0 and dx == 0:
        return x
    t = ad.roll(t, (int(dy), int(dx)), (t.ndim - 3, t.ndim - 2))
    return _out(t, was_tensor)


def region_ids(grid: WindowGrid, displacement: int) -> np.ndarray:
    """Label every padded-map cell by the pre-shift region it came from."""
    s, w = displacement, grid.w
    img = np.zeros((grid.Hp, grid.Wp), dtype=np.int64)
    h_slices = (slice(0, grid.Hp - w), slice(grid.Hp - w, grid.Hp - s), slice(grid.Hp - s, None))
    w_slices = (slice(0, grid.Wp - w), slice(grid.Wp - w, grid.Wp - s), slice(grid.Wp - s, None))
    label = 0
    for hs in h_slices:
        for ws in w_slices:
            img[hs, ws] = label
            label += 1
    return img


def shift_attention_mask(grid: WindowGrid, displacement: int | None = None) -> np.ndarray:
    """Additive mask ``[n_windows, w*w, w*w]`` for attention on a shifted map.

    Token pairs whose cells came from different regions before the roll get
    ``MASK_NEG``; all other entries are 0.
    """
    s = grid.w // 2 if displacement is None else int(displacement)
    if s < 0 or s >= grid.w:
        raise ConfigError(f"shift displacement must be in [0, {grid.w}), got {s}")
    if s == 0:
        return np.zeros((grid.n_windows, grid.tokens, grid.tokens))
    ids = region_ids(grid, s)[..., None]
    win, _ = partition_windows(ids, grid.w)
    win = win[..., 0]
    diff = win[:, :, None] != win[:, None, :]
    return np.where(diff, MASK_NEG, 0.0)
