"""AdamW with linear warmup followed by cosine decay."""

from __future__ import annotations

import math

import numpy as np

from .errors import TrainingError


def cosine_schedule(step: int, peak_lr: float, warmup_steps: int, total_steps: int, min_lr: float = 0.0) -> float:
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return min_lr + (peak_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def decays(name: str, shape: tuple) -> bool:
    """Weight decay applies to matrices and kernels, not to biases, norms or bias tables."""
    return len(shape) >= 2 and not name.endswith("rel_pos.table")


class AdamW:
    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.05):
        self.params = dict(named_params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.state = {
            "m": {n: np.zeros_like(p.data) for n, p in self.params.items()},
            "v": {n: np.zeros_like(p.data) for n, p in self.params.items()},
            "t": 0,
        }

    def load_state(self, state: dict) -> None:
        for key in ("m", "v"):
            for n in self.params:
                if n in state.get(key, {}):
                    self.state[key][n] = np.array(state[key][n], dtype=self.params[n].data.dtype)
        self.state["t"] = int(state.get("t", 0))

    def step(self, lr=None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.state["t"] += 1
        t = self.state["t"]
        c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            m, v = self.state["m"][name], self.state["v"][name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.weight_decay and decays(name, p.shape):
                p.data *= (1.0 - lr * self.weight_decay)
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adamw_step(params: dict, grads: dict, state: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """Functional form over plain arrays; updates ``params`` and ``state`` in place."""
    b1, b2 = betas
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    m_all = state.setdefault("m", {})
    v_all = state.setdefault("v", {})
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        m = m_all.setdefault(name, np.zeros_like(p))
        v = v_all.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= (lr / (1.0 - b1 ** t)) * m / (np.sqrt(v / (1.0 - b2 ** t)) + eps)
