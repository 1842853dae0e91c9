"""Baseline window attention: MHSA per window with relative position bias."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import Linear, Module, Parameter
from .windowing import WindowGrid, merge_windows, partition_windows, shift_attention_mask


def attend(q: Tensor, k: Tensor, v: Tensor, bias=None, mask=None) -> Tensor:
    """Scaled dot-product attention in head-major layout ``[..., nW, N, L, C']``.

    ``bias`` is a Tensor ``[N, L, Lk]``; ``mask`` a constant ``[nW, L, Lk]``.
    The bias is added to the logits before the mask, the mask before softmax.
    """
    scale = q.shape[-1] ** -0.5
    logits = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), scale)
    if bias is not None:
        if tuple(bias.shape) != tuple(logits.shape[-3:]):
            raise DimensionError(f"attention bias {bias.shape} does not match logits {logits.shape[-3:]}")
        logits = ad.add(logits, bias)
    if mask is not None:
        mask = np.asarray(mask)
        want = (logits.shape[-4],) + tuple(logits.shape[-2:])
        if mask.shape != want:
            raise DimensionError(f"attention mask {mask.shape} does not match {want}")
        logits = ad.add_const(logits, mask[:, None])
    return ad.matmul(ad.softmax(logits, axis=-1), v)


def _heads_major(t: Tensor) -> Tensor:
    d = t.ndim
    axes = tuple(range(d - 4)) + (d - 4, d - 2, d - 3, d - 1)
    return ad.transpose(t, axes)


def window_mhsa(q, k, v, bias=None, mask=None) -> Tensor:
    """Multi-head attention inside each window.

    ``q, k, v`` are ``[..., n_win, w*w, N, C']``; the result has the same layout.
    """
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if q.ndim < 4 or k.shape != v.shape or q.shape[:-3] != k.shape[:-3] or q.shape[-2:] != k.shape[-2:]:
        raise DimensionError(f"window_mhsa: inconsistent q {q.shape}, k {k.shape}, v {v.shape}")
    out = attend(_heads_major(q), _heads_major(k), _heads_major(v), bias, mask)
    return _heads_major(out)


def relative_position_index(w: int) -> np.ndarray:
    """``[w*w, w*w]`` table index of the 2-D displacement between tokens."""
    ys, xs = np.meshgrid(np.arange(w), np.arange(w), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()])
    rel = coords[:, :, None] - coords[:, None, :] + (w - 1)
    return rel[0] * (2 * w - 1) + rel[1]


class RelPosBias(Module):
    def __init__(self, window: int, heads: int):
        self.table = Parameter(((2 * window - 1) ** 2, heads), ("trunc_normal", 0.02))
        self.index = relative_position_index(window)
        self.window, self.heads = window, heads

    def __call__(self) -> Tensor:
        """Bias ``[N, w*w, w*w]``."""
        return ad.transpose(ad.take(self.table, self.index), (2, 0, 1))


class WindowAttention(Module):
    """Swin-style window attention, optionally on a cyclically shifted map."""

    def __init__(self, dim: int, heads: int, window: int, rel_pos: bool = True):
        if dim % heads:
            raise ConfigError(f"heads ({heads}) must divide channels ({dim})")
        self.dim, self.heads, self.window = dim, heads, window
        self.qkv = Linear(dim, 3 * dim)
        self.proj = Linear(dim, dim)
        self.rel_pos = RelPosBias(window, heads) if rel_pos else None
        self._masks: dict = {}

    def mask_for(self, grid: WindowGrid, shift: int) -> np.ndarray:
        key = (grid.Hp, grid.Wp, shift)
        if key not in self._masks:
            self._masks[key] = shift_attention_mask(WindowGrid(grid.Hp, grid.Wp, grid.w), shift)
        return self._masks[key]

    def project(self, x: Tensor, shift: int = 0):
        """q, k, v in head-major window layout ``[B, nW, N, L, C']`` plus the grid."""
        B, H, W, C = x.shape
        grid = WindowGrid(H, W, self.window)
        t = ad.pad_spatial(self.qkv(x), grid.pad_h, grid.pad_w)
        if shift:
            t = ad.roll(t, (-shift, -shift), (1, 2))
        t, _ = partition_windows(t, self.window)
        t = ad.reshape(t, (B, grid.n_windows, grid.tokens, 3, self.heads, C // self.heads))
        t = ad.transpose(t, (3, 0, 1, 4, 2, 5))
        return t[0], t[1], t[2], grid

    def __call__(self, x: Tensor, shift: int = 0, use_bias: bool = True) -> Tensor:
        B, H, W, C = x.shape
        q, k, v, grid = self.project(x, shift)
        bias = self.rel_pos() if (self.rel_pos is not None and use_bias) else None
        mask = self.mask_for(grid, shift) if shift else None
        out = attend(q, k, v, bias, mask)
        return self.finish(out, grid, shift)

    def finish(self, out: Tensor, grid: WindowGrid, shift: int = 0) -> Tensor:
        """Merge head-major window outputs back to ``[B, H, W, C]`` and project."""
        B = out.shape[0]
        out = ad.reshape(ad.transpose(out, (0, 1, 3, 2, 4)), (B, grid.n_windows, grid.tokens, self.dim))
        out = merge_windows(out, WindowGrid(grid.Hp, grid.Wp, grid.w))
        if shift:
            out = ad.roll(out, (shift, shift), (1, 2))
        if grid.pad_h or grid.pad_w:
            out = ad.getitem(out, (slice(None), slice(0, grid.H), slice(0, grid.W)))
        return self.proj(out)
