"""Pre-norm transformer block hosting either baseline or VSA attention."""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .attention import WindowAttention
from .errors import ConfigError
from .nn import LayerNorm, Mlp, Module
from .vsa import CPE, VSAttention


@dataclass(frozen=True)
class Toggles:
    """Component switches of the ablation: CPE, VSR and shifted windows."""

    cpe: bool = True
    vsr: bool = True
    shift: bool = False

    @classmethod
    def parse(cls, text: str) -> "Toggles":
        names = {t.strip().lower() for t in str(text).split(",") if t.strip()}
        names.discard("none")
        unknown = names - {"cpe", "vsr", "shift"}
        if unknown:
            raise ConfigError(f"unknown toggle(s) {sorted(unknown)}; expected cpe, vsr, shift")
        return cls("cpe" in names, "vsr" in names, "shift" in names)

    def __str__(self) -> str:
        on = [n for n in ("cpe", "vsr", "shift") if getattr(self, n)]
        return ",".join(on) if on else "none"


BASELINE = Toggles(cpe=False, vsr=False, shift=True)
VSA_DEFAULT = Toggles(cpe=True, vsr=True, shift=False)

# Rows of the component ablation, in table order.
ABLATION_ROWS = (
    Toggles(cpe=False, vsr=False, shift=True),
    Toggles(cpe=False, vsr=True, shift=False),
    Toggles(cpe=True, vsr=False, shift=True),
    Toggles(cpe=True, vsr=True, shift=False),
    Toggles(cpe=True, vsr=True, shift=True),
)


class TransformerBlock(Module):
    """``x = z (+ CPE(z)); x = x + Attn(LN(x)); x = x + FFN(LN(x))``.

    ``shift_size > 0`` rolls the map before attention; for baseline attention
    the shifted-window mask is applied, for VSA the roll alone is used.
    """

    def __init__(self, dim: int, heads: int, window: int, mlp_ratio: float = 4.0,
                 toggles: Toggles = BASELINE, shift_size: int = 0, norm_mode: str = "token_units",
                 layer_id: int = 0):
        if dim % heads:
            raise ConfigError(f"heads ({heads}) must divide channels ({dim})")
        if shift_size and not 0 < shift_size < window:
            raise ConfigError(f"shift size must be in (0, {window}), got {shift_size}")
        self.dim, self.heads, self.window, self.mlp_ratio = dim, heads, window, mlp_ratio
        self.toggles = toggles
        self.shift_size = int(shift_size)
        self.layer_id = layer_id
        self.cpe = CPE(dim, window) if toggles.cpe else None
        self.norm1 = LayerNorm(dim)
        if toggles.vsr:
            self.attn = VSAttention(dim, heads, window, norm_mode)
        else:
            self.attn = WindowAttention(dim, heads, window, rel_pos=True)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    @property
    def is_vsa(self) -> bool:
        return self.toggles.vsr

    def __call__(self, z, trace=None, shift=None):
        shift = self.shift_size if shift is None else int(shift)
        x = self.cpe(z) if self.cpe is not None else z
        h = self.norm1(x)
        if self.is_vsa:
            layer_trace = [] if trace is not None else None
            a = self.attn(h, shift=shift, trace=layer_trace)
            if trace is not None:
                trace.extend((self.layer_id, t) for t in layer_trace)
        else:
            a = self.attn(h, shift=shift)
        x = ad.add(x, a)
        return ad.add(x, self.mlp(self.norm2(x)))


def baseline_block(z, block: TransformerBlock, shifted: bool = False):
    """Run a baseline block, forcing the shift on or off."""
    if block.is_vsa:
        raise ConfigError("baseline_block needs a block built without VSR")
    return _unbatched(block, z, shift=block.window // 2 if shifted else 0)


def vsa_block(z, block: TransformerBlock, trace=None):
    return _unbatched(block, z, trace=trace)


def _unbatched(block, z, **kw):
    z = ad.as_tensor(z)
    if z.ndim == 3:
        out = block(ad.reshape(z, (1,) + z.shape), **kw)
        return ad.reshape(out, out.shape[1:])
    return block(z, **kw)
