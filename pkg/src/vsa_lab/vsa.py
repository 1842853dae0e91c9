"""Varied-size window attention.

Each default window predicts, per head, a scale and offset for its target
window (pool -> LeakyReLU -> 1x1 conv). Keys and values are projected on the
whole map and bilinearly sampled at the ``w*w`` transformed token positions;
queries stay on the default windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import WindowAttention, attend
from .autodiff import Tensor
from .autodiff.tensor import make_node
from .errors import ConfigError
from .nn import Module, Parameter
from .windowing import WindowGrid

NORM_MODES = ("token_units", "window_ratio")


class VSR(Module):
    """Window regression head: 1x1 conv from C to 4N channels.

    Output channels per head are ``[ds_x, ds_y, do_x, do_y]``. Zero init makes
    every target window equal to its default window.
    """

    def __init__(self, dim: int, heads: int):
        self.weight = Parameter((dim, 4 * heads), ("zeros",))
        self.bias = Parameter((4 * heads,), ("zeros",))
        self.heads = heads


def vsr_predict(x: Tensor, grid: WindowGrid, params: VSR) -> Tensor:
    """Raw regression outputs ``[B, n_windows, N, 4]``."""
    x = ad.as_tensor(x)
    if x.ndim == 3:
        x = ad.reshape(x, (1,) + x.shape)
    if params.weight.shape[0] != x.shape[-1] or params.weight.shape[1] != 4 * params.heads:
        raise ConfigError(
            f"VSR weight {params.weight.shape} does not fit {x.shape[-1]} channels and {params.heads} heads")
    pooled = ad.leaky_relu(ad.avg_pool2d(x, grid.w))
    raw = ad.linear(pooled, params.weight, params.bias)
    return ad.reshape(raw, (x.shape[0], grid.n_windows, params.heads, 4))


def _axis_ratio(grid: WindowGrid, norm_mode: str) -> np.ndarray:
    if norm_mode == "token_units":
        return np.ones(2)
    if norm_mode == "window_ratio":
        return np.array([grid.w / grid.W, grid.w / grid.H])
    raise ConfigError(f"unknown norm_mode {norm_mode!r}; expected one of {NORM_MODES}")


@dataclass
class WindowTransform:
    """Effective per-(image, window, head) transform of the default windows."""

    scale: np.ndarray   # [B, nW, N, 2] (s_x, s_y)
    offset: np.ndarray  # [B, nW, N, 2] (o_x, o_y), token units
    grid: WindowGrid

    @property
    def center(self) -> np.ndarray:
        return self.grid.centers()

    def default_rects(self) -> np.ndarray:
        """``[nW, 4]`` as (x0, y0, x1, y1); each token covers a unit cell."""
        c, h = self.center, self.grid.w / 2.0
        return np.concatenate([c - h, c + h], axis=-1)

    def target_rects(self) -> np.ndarray:
        """``[B, nW, N, 4]``: the default rect mapped through scale and offset."""
        c = self.center[None, :, None, :] + self.offset
        h = self.scale * (self.grid.w / 2.0)
        return np.concatenate([c - h, c + h], axis=-1)


def effective_transform(raw, grid: WindowGrid, norm_mode: str = "token_units") -> WindowTransform:
    raw = raw.data if isinstance(raw, Tensor) else np.asarray(raw)
    ratio = _axis_ratio(grid, norm_mode)
    return WindowTransform(1.0 + raw[..., :2] * ratio, raw[..., 2:] * ratio, grid)


def target_window_coords(raw, grid: WindowGrid, norm_mode: str = "token_units") -> Tensor:
    """Sample positions ``[B, n_windows, N, w*w, 2]`` for every target window.

    Each default token at offset ``rel`` from its window centre maps to
    ``rel * s + o + centre``; nothing is clamped.
    """
    raw = ad.as_tensor(raw)
    if raw.ndim == 3:
        raw = ad.reshape(raw, (1,) + raw.shape)
    ratio = _axis_ratio(grid, norm_mode)
    rel = grid.relative_coords()                    # [L, 2]
    centers = grid.centers()                        # [nW, 2]
    s = 1.0 + raw.data[..., :2] * ratio             # [B, nW, N, 2]
    o = raw.data[..., 2:] * ratio
    out = rel[None, None, None] * s[:, :, :, None] + (o + centers[None, :, None])[:, :, :, None]

    def bw(g):
        gs = np.einsum("bwnlc,lc->bwnc", g, rel) * ratio
        go = g.sum(axis=3) * ratio
        return (np.concatenate([gs, go], axis=-1),)

    return make_node(out.astype(raw.dtype, copy=False), (raw,), bw)


class CPE(Module):
    """Residual depthwise convolution with kernel size equal to the window size."""

    def __init__(self, dim: int, kernel: int):
        if kernel % 2 == 0:
            raise ConfigError(f"CPE kernel (window size) must be odd, got {kernel}")
        self.kernel = Parameter((kernel, kernel, dim), ("trunc_normal", 0.02))

    def __call__(self, z):
        return cpe(z, self)


def cpe(z, params: CPE) -> Tensor:
    return ad.add(z, ad.depthwise_conv2d(z, params.kernel))


class VSAttention(WindowAttention):
    """Window attention whose keys/values come from regressed target windows.

    Shares the qkv/proj layout of :class:`WindowAttention` (no relative
    position bias) so weights transfer between the two one-to-one.
    """

    def __init__(self, dim: int, heads: int, window: int, norm_mode: str = "token_units"):
        super().__init__(dim, heads, window, rel_pos=False)
        if norm_mode not in NORM_MODES:
            raise ConfigError(f"unknown norm_mode {norm_mode!r}")
        self.vsr = VSR(dim, heads)
        self.norm_mode = norm_mode
        self.coord_grad = True

    def sample_kv(self, kv_map: Tensor, coords: Tensor):
        """Sample per-head k, v ``[B, nW, N, L, C']`` from ``kv_map[B, H, W, 2C]``."""
        B, H, W, _ = kv_map.shape
        N, Cp = self.heads, self.dim // self.heads
        nW, L = coords.shape[1], coords.shape[3]
        src = ad.transpose(ad.reshape(kv_map, (B, H, W, 2, N, Cp)), (0, 4, 1, 2, 3, 5))
        src = ad.reshape(src, (B * N, H, W, 2 * Cp))
        pts = ad.reshape(ad.transpose(coords, (0, 2, 1, 3, 4)), (B * N, nW * L, 2))
        smp = ad.grid_sample_bilinear(src, pts, coord_grad=self.coord_grad)
        smp = ad.transpose(ad.reshape(smp, (B, N, nW, L, 2, Cp)), (4, 0, 2, 1, 3, 5))
        return smp[0], smp[1]

    def __call__(self, x: Tensor, shift: int = 0, trace=None, raw_override=None) -> Tensor:
        B, H, W, C = x.shape
        if shift:
            x = ad.roll(x, (-shift, -shift), (1, 2))
        grid = WindowGrid(H, W, self.window)
        qkv = self.qkv(x)
        q = ad.pad_spatial(ad.getitem(qkv, (Ellipsis, slice(0, C))), grid.pad_h, grid.pad_w)
        q = ad.reshape(q, (B, grid.nh, grid.w, grid.nw, grid.w, self.heads, C // self.heads))
        q = ad.reshape(ad.transpose(q, (0, 1, 3, 5, 2, 4, 6)),
                       (B, grid.n_windows, self.heads, grid.tokens, C // self.heads))
        kv = ad.getitem(qkv, (Ellipsis, slice(C, 3 * C)))
        raw = vsr_predict(x, grid, self.vsr) if raw_override is None else ad.as_tensor(raw_override)
        if trace is not None:
            trace.append(effective_transform(raw, grid, self.norm_mode))
        coords = target_window_coords(raw, grid, self.norm_mode)
        k, v = self.sample_kv(kv, coords)
        out = attend(q, k, v)
        out = self.finish(out, grid)
        if shift:
            out = ad.roll(out, (shift, shift), (1, 2))
        return out


def vsa_attention(x, attn: VSAttention, trace=None) -> Tensor:
    x = ad.as_tensor(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    out = attn(x, trace=trace)
    return ad.reshape(out, out.shape[1:]) if squeeze else out
