"""Parameters and a small module tree with deterministic initialisation."""

from __future__ import annotations

import zlib
from typing import Iterator, Optional

import numpy as np
from scipy.stats import truncnorm

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


class Parameter(Tensor):
    """Trainable leaf tensor.

    ``init_spec`` is a tuple ``(kind, *hyper)``: ``("trunc_normal", std)``,
    ``("zeros",)`` or ``("ones",)``. Storage is allocated by
    :meth:`initialize`, so a model can be built shape-only for cost counting.
    """

    __slots__ = ("name", "init_spec", "_shape")

    def __init__(self, shape, init_spec=("zeros",), dtype=ad.DEFAULT_DTYPE):
        super().__init__(np.empty(0, dtype=dtype), requires_grad=True)
        self._shape = tuple(int(s) for s in shape)
        self.init_spec = tuple(init_spec)
        self.name = ""

    @property
    def shape(self) -> tuple:
        return self._shape

    @property
    def size(self) -> int:
        return int(np.prod(self._shape, dtype=np.int64))

    @property
    def materialized(self) -> bool:
        return self.data.shape == self._shape

    def initialize(self, rng: np.random.Generator, dtype=None) -> None:
        dtype = dtype or self.data.dtype
        kind = self.init_spec[0]
        if kind == "zeros":
            arr = np.zeros(self._shape)
        elif kind == "ones":
            arr = np.ones(self._shape)
        elif kind == "trunc_normal":
            std = self.init_spec[1]
            arr = truncnorm.rvs(-2.0, 2.0, scale=std, size=self._shape, random_state=rng)
        elif kind == "normal":
            arr = rng.normal(0.0, self.init_spec[1], size=self._shape)
        else:
            raise ConfigError(f"unknown init kind {kind!r}")
        self.data = np.asarray(arr, dtype=dtype).reshape(self._shape)
        self.grad = None

    def assign(self, value) -> None:
        value = np.asarray(value, dtype=self.data.dtype if self.data.size else None)
        if value.shape != self._shape:
            raise ConfigError(f"{self.name}: expected shape {self._shape}, got {value.shape}")
        self.data = np.array(value, copy=True)


class Module:
    """Container whose attributes may be Parameters, Modules or lists of Modules."""

    def _children(self) -> Iterator:
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = name
                yield name, val
            else:
                yield from val.named_parameters(name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix.rstrip("."), self
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{key}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def initialize(self, seed: int, dtype=ad.DEFAULT_DTYPE) -> "Module":
        """Draw every parameter from a generator keyed on (seed, parameter name)."""
        for name, p in self.named_parameters():
            rng = np.random.default_rng([int(seed), zlib.crc32(name.encode())])
            p.initialize(rng, dtype=dtype)
        return self

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        if missing:
            raise KeyError(f"missing parameter {missing[0]!r}")
        extra = sorted(set(state) - set(params))
        if extra:
            raise KeyError(f"unexpected parameter {extra[0]!r}")
        for name, p in params.items():
            p.assign(state[name])


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, std: float = 0.02):
        self.weight = Parameter((in_features, out_features), ("trunc_normal", std))
        self.bias: Optional[Parameter] = Parameter((out_features,), ("zeros",)) if bias else None
        self.in_features, self.out_features = in_features, out_features

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter((dim,), ("ones",))
        self.bias = Parameter((dim,), ("zeros",))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.weight, self.bias, self.eps)


class Mlp(Module):
    """Two linear layers with GELU; hidden width is ``ratio * dim``."""

    def __init__(self, dim: int, ratio: float = 4.0):
        hidden = int(round(dim * ratio))
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim)
        self.hidden = hidden

    def __call__(self, x):
        return self.fc2(ad.gelu(self.fc1(x)))
