"""Spatial primitives on channel-last maps: pooling, depthwise conv, bilinear sampling.

Maps are ``[B, H, W, C]``; a 3-D ``[H, W, C]`` input is treated as ``B = 1``
and returned without the batch axis.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError, DimensionError, NumericInputError
from .tensor import Tensor, as_tensor, make_node


def _batched(x: Tensor):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"expected [H, W, C] or [B, H, W, C], got {x.shape}")


def avg_pool2d(x, w: int) -> Tensor:
    """Non-overlapping ``w x w`` mean pooling, kernel = stride = ``w``.

    Maps whose extents are not multiples of ``w`` are zero-padded bottom/right
    and each output is divided by its count of real cells, so padding does not
    bias the mean.
    """
    x = as_tensor(x)
    w = int(w)
    if w < 1:
        raise DimensionError(f"avg_pool2d: kernel must be >= 1, got {w}")
    xd, squeeze = _batched(x)
    B, H, W, C = xd.shape
    if H < 1 or W < 1:
        raise DimensionError(f"avg_pool2d: empty map {H}x{W}")
    nh, nw = -(-H // w), -(-W // w)
    ph, pw = nh * w - H, nw * w - W
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, ph), (0, pw), (0, 0)))
    rows = np.minimum(w, H - np.arange(nh) * w)
    cols = np.minimum(w, W - np.arange(nw) * w)
    counts = (rows[:, None] * cols[None, :]).astype(xd.dtype)[None, :, :, None]
    out = xd.reshape(B, nh, w, nw, w, C).sum(axis=(2, 4)) / counts

    def bw(g):
        if squeeze:
            g = g[None]
        g = g / counts
        full = np.broadcast_to(g[:, :, None, :, None, :], (B, nh, w, nw, w, C)).reshape(B, nh * w, nw * w, C)
        full = full[:, :H, :W, :]
        return (np.ascontiguousarray(full[0] if squeeze else full),)

    return make_node(out[0] if squeeze else out, (x,), bw)


def depthwise_conv2d(x, kernel) -> Tensor:
    """Per-channel ``k x k`` convolution, stride 1, zero padding ``(k - 1) / 2``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[1]:
        raise DimensionError(f"depthwise_conv2d: kernel must be [k, k, C], got {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"depthwise_conv2d: kernel size must be odd, got {k}")
    xd, squeeze = _batched(x)
    B, H, W, C = xd.shape
    if kernel.shape[2] != C:
        raise DimensionError(f"depthwise_conv2d: kernel channels {kernel.shape[2]} != input channels {C}")
    p = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0)))
    kd = kernel.data
    out = np.zeros_like(xd)
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + H, j:j + W, :] * kd[i, j]

    def bw(g):
        if squeeze:
            g = g[None]
        gx = gk = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gp[:, i:i + H, j:j + W, :] += g * kd[i, j]
            gx = gp[:, p:p + H, p:p + W, :]
            gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        if kernel.requires_grad:
            gk = np.empty_like(kd)
            g2 = g.reshape(-1, C)
            for i in range(k):
                for j in range(k):
                    gk[i, j] = np.einsum("nc,nc->c", xp[:, i:i + H, j:j + W, :].reshape(-1, C), g2)
        return gx, gk

    return make_node(out[0] if squeeze else out, (x, kernel), bw)


def grid_sample_bilinear(src, coords, coord_grad: bool = True) -> Tensor:
    """Bilinear read of ``src[G, H, W, C]`` at continuous ``coords[G, P, 2]``.

    Coordinates are ``(x, y)`` in token units: ``(0, 0)`` is the first token and
    ``(W - 1, H - 1)`` the last. Neighbours outside the map read as zero.
    Gradients flow to ``src`` and, unless ``coord_grad`` is False, to ``coords``.
    The coordinate derivative uses ``floor`` cells, i.e. it is right-continuous
    at integer positions.

    Unbatched ``src[H, W, C]`` with ``coords[P, 2]`` is also accepted.
    """
    src, coords = as_tensor(src), as_tensor(coords)
    squeeze = src.ndim == 3
    sd = src.data[None] if squeeze else src.data
    cd = coords.data[None] if squeeze else coords.data
    if sd.ndim != 4:
        raise DimensionError(f"grid_sample: src must be [H, W, C] or [G, H, W, C], got {src.shape}")
    if cd.ndim != 3 or cd.shape[-1] != 2 or cd.shape[0] != sd.shape[0]:
        raise DimensionError(f"grid_sample: coords must be [P, 2] (or [G, P, 2] matching src), got {coords.shape}")
    if np.isnan(cd).any():
        raise NumericInputError("grid_sample: NaN coordinate")
    G, H, W, C = sd.shape
    P = cd.shape[1]
    x, y = cd[..., 0], cd[..., 1]
    x0f, y0f = np.floor(x), np.floor(y)
    fx, fy = x - x0f, y - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)

    offsets = ((0, 0), (1, 0), (0, 1), (1, 1))
    base = (np.arange(G, dtype=np.int64) * (H * W))[:, None]
    idx, valid = [], []
    for dx, dy in offsets:
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        flat = base + np.clip(yi, 0, H - 1) * W + np.clip(xi, 0, W - 1)
        idx.append(np.where(ok, flat, 0))
        valid.append(ok)
    wts = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    wts = [np.where(ok, wt, 0.0) for wt, ok in zip(wts, valid)]

    flat_src = sd.reshape(G * H * W, C)
    vals = [flat_src[i] * ok[..., None] for i, ok in zip(idx, valid)]
    out = vals[0] * wts[0][..., None]
    for v, wt in zip(vals[1:], wts[1:]):
        out = out + v * wt[..., None]

    def bw(g):
        if squeeze:
            g = g[None]
        gsrc = gcoords = None
        if src.requires_grad:
            rows = np.broadcast_to(np.arange(G * P).reshape(G, P), (4, G, P)).reshape(-1)
            cols = np.stack(idx).reshape(-1)
            data = np.stack(wts).reshape(-1)
            S = sp.csr_matrix((data, (rows, cols)), shape=(G * P, G * H * W))
            gsrc = np.asarray(S.T @ g.reshape(G * P, C)).reshape(G, H, W, C)
            if squeeze:
                gsrc = gsrc[0]
        if coords.requires_grad:
            if coord_grad:
                v00, v10, v01, v11 = vals
                dvx = (1 - fy)[..., None] * (v10 - v00) + fy[..., None] * (v11 - v01)
                dvy = (1 - fx)[..., None] * (v01 - v00) + fx[..., None] * (v11 - v10)
                gcoords = np.stack([(g * dvx).sum(-1), (g * dvy).sum(-1)], axis=-1)
            else:
                gcoords = np.zeros_like(cd)
            if squeeze:
                gcoords = gcoords[0]
        return gsrc, gcoords

    return make_node(out[0] if squeeze else out, (src, coords), bw)
