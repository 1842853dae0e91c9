"""Differentiable primitives on :class:`Tensor`.

Binary ops accept equal shapes, a scalar, or an operand whose shape is a
suffix of the other's (broadcast over leading batch dims only).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_node

LEAKY_SLOPE = 0.01
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` (leading dims / size-1 dims)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_binary(a: Tensor, b: Tensor, opname: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 and a.ndim == 0 or b.size == 1 and b.ndim == 0:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(short) and long_[len(long_) - len(short):] == short:
        return
    raise DimensionError(f"{opname}: incompatible shapes {sa} and {sb}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _sum_to(g, sa), _sum_to(g, sb)

    return make_node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _sum_to(g, sa), _sum_to(-g, sb)

    return make_node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _sum_to(g * bd, ad.shape) if a.requires_grad else None
        gb = _sum_to(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _sum_to(g / bd, ad.shape) if a.requires_grad else None
        gb = _sum_to(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), bw)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return make_node(x.data * c, (x,), lambda g: (g * c,))


def add_const(x, arr) -> Tensor:
    """``x + arr`` for a non-differentiable numpy ``arr`` (e.g. an attention mask)."""
    x = as_tensor(x)
    arr = np.asarray(arr)
    out = x.data + arr
    if out.shape != x.shape:
        raise DimensionError(f"add_const: constant {arr.shape} would enlarge operand {x.shape}")
    return make_node(out, (x,), lambda g: (g,))


def mul_const(x, arr) -> Tensor:
    x = as_tensor(x)
    arr = np.asarray(arr)
    out = x.data * arr
    if out.shape != x.shape:
        raise DimensionError(f"mul_const: constant {arr.shape} would enlarge operand {x.shape}")
    return make_node(out, (x,), lambda g: (g * arr,))


# -- pointwise nonlinearities -------------------------------------------------

def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return make_node(out, (x,), lambda g: (np.where(pos, g, slope * g),))


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    out = xd * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_node(out, (x,), bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,))


def elementwise_map(x, op: str, other=None, slope: float = LEAKY_SLOPE, factor: float = 1.0) -> Tensor:
    """Dispatch by name: add, mul, gelu, leaky_relu, scale."""
    if op == "add":
        return add(x, other)
    if op == "mul":
        return mul(x, other)
    if op == "gelu":
        return gelu(x)
    if op == "leaky_relu":
        return leaky_relu(x, slope)
    if op == "scale":
        return scale(x, factor)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot contract {a.shape} with {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from exc
    ad, bd = a.data, b.data

    def bw(g):
        ga = _sum_to(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _sum_to(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return make_node(out, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x[..., in] @ weight[in, out] + bias[out]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(out, parents, bw)


# -- reductions and normalisation ---------------------------------------------

def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_node(np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_node(y, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    n = xd.shape[-1]

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), bw)


def cross_entropy(logits, labels, smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy of ``logits[B, K]`` against integer ``labels[B]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    B, K = logits.shape
    target = np.full((B, K), smoothing / K, dtype=logits.dtype)
    target[np.arange(B), labels] += 1.0 - smoothing
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -(target * logp).sum() / B

    def bw(g):
        return (g * (np.exp(logp) - target) / B,)

    return make_node(np.asarray(loss), (logits,), bw)


# -- shape manipulation --------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from exc
    return make_node(out, (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, axes)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    out = x.data[idx]
    basic = _is_basic_index(idx)
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(np.array(out, copy=basic) if basic else out, (x,), bw)


def take(table, index) -> Tensor:
    """Row gather ``table[index]`` for an integer index array of any shape."""
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    out = table.data[index]
    shape, dtype = table.shape, table.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index.reshape(-1), g.reshape((-1,) + shape[1:]))
        return (full,)

    return make_node(out, (table,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_node(out, tuple(tensors), bw)


def pad_spatial(x, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad bottom/right of the two axes before the channel axis."""
    x = as_tensor(x)
    if pad_h == 0 and pad_w == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[-3] = (0, pad_h)
    widths[-2] = (0, pad_w)
    H, W = x.shape[-3], x.shape[-2]
    out = np.pad(x.data, widths)

    def bw(g):
        return (np.ascontiguousarray(g[..., :H, :W, :]),)

    return make_node(out, (x,), bw)


def roll(x, shifts, axes) -> Tensor:
    x = as_tensor(x)
    shifts, axes = tuple(shifts), tuple(axes)
    neg = tuple(-s for s in shifts)
    return make_node(np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, neg, axes),))
