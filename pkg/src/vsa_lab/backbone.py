"""Four-stage hierarchical backbone with per-stage baseline or VSA blocks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import BASELINE, VSA_DEFAULT, Toggles, TransformerBlock
from .config import int_list, section
from .errors import ConfigError
from .nn import LayerNorm, Linear, Module


@dataclass(frozen=True)
class ModelConfig:
    img_size: int = 224
    patch_size: int = 4
    in_chans: int = 3
    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    heads: tuple = (3, 6, 12, 24)
    window: int = 7
    mlp_ratio: float = 4.0
    vsa_stages: tuple = ()
    toggles: Toggles = field(default_factory=lambda: VSA_DEFAULT)
    num_classes: int = 1000
    norm_mode: str = "token_units"

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "vsa_stages", tuple(sorted({int(s) for s in self.vsa_stages})))
        if isinstance(self.toggles, str):
            object.__setattr__(self, "toggles", Toggles.parse(self.toggles))
        self.validate()

    def validate(self) -> None:
        if self.img_size % self.patch_size:
            raise ConfigError(f"img_size {self.img_size} is not divisible by patch_size {self.patch_size}")
        if len(self.depths) != len(self.heads):
            raise ConfigError("depths and heads must have the same length")
        for i, (c, n) in enumerate(zip(self.dims, self.heads), 1):
            if n < 1 or c % n:
                raise ConfigError(f"stage {i}: heads {n} must divide channels {c}")
        bad = [s for s in self.vsa_stages if not 1 <= s <= len(self.depths)]
        if bad:
            raise ConfigError(f"vsa_stages {bad} out of range 1..{len(self.depths)}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.toggles.cpe and self.vsa_stages and self.window % 2 == 0:
            raise ConfigError(f"CPE needs an odd window size, got {self.window}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")

    @property
    def dims(self) -> tuple:
        return tuple(self.embed_dim * 2 ** i for i in range(len(self.depths)))

    @property
    def token_size(self) -> int:
        return self.img_size // self.patch_size

    def stage_toggles(self, stage: int) -> Toggles:
        """Toggles for 1-based ``stage``."""
        return self.toggles if stage in self.vsa_stages else BASELINE

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "model.img_size": str(self.img_size),
            "model.patch_size": str(self.patch_size),
            "model.in_chans": str(self.in_chans),
            "model.embed_dim": str(self.embed_dim),
            "model.depths": ",".join(map(str, self.depths)),
            "model.heads": ",".join(map(str, self.heads)),
            "model.window": str(self.window),
            "model.mlp_ratio": repr(float(self.mlp_ratio)),
            "model.vsa_stages": ",".join(map(str, self.vsa_stages)) or "none",
            "model.toggles": str(self.toggles),
            "model.num_classes": str(self.num_classes),
            "model.norm_mode": self.norm_mode,
        }

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        sec = section(values, "model")
        base = PRESETS[sec["preset"]] if "preset" in sec else cls()
        kw = {}
        conv = {
            "img_size": int, "patch_size": int, "in_chans": int, "embed_dim": int,
            "depths": int_list, "heads": int_list, "window": int, "mlp_ratio": float,
            "vsa_stages": int_list, "toggles": Toggles.parse, "num_classes": int, "norm_mode": str,
        }
        for key, val in sec.items():
            if key == "preset":
                continue
            if key not in conv:
                raise ConfigError(f"unknown model key {key!r}")
            try:
                kw[key] = conv[key](val)
            except ValueError as exc:
                raise ConfigError(f"model.{key}: {exc}") from exc
        return replace(base, **kw)


PRESETS = {
    "swin_tiny": ModelConfig(),
    "swin_pico": ModelConfig(img_size=64, embed_dim=32, depths=(1, 1, 2, 1), heads=(1, 2, 4, 8),
                             window=7, num_classes=4),
    "swin_nano": ModelConfig(img_size=16, embed_dim=8, depths=(1, 1, 1, 1), heads=(2, 2, 4, 4),
                             window=3, num_classes=4),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


class PatchEmbed(Module):
    """Non-overlapping ``p x p`` patches, linearly projected, then layer norm."""

    def __init__(self, patch: int, in_chans: int, dim: int):
        self.patch = patch
        self.proj = Linear(patch * patch * in_chans, dim)
        self.norm = LayerNorm(dim)

    def tokens(self, img) -> Tensor:
        img = ad.as_tensor(img)
        B, Hi, Wi, Ci = img.shape
        p = self.patch
        if Hi % p or Wi % p:
            raise ConfigError(f"image {Hi}x{Wi} is not divisible by patch size {p}")
        t = ad.reshape(img, (B, Hi // p, p, Wi // p, p, Ci))
        t = ad.reshape(ad.transpose(t, (0, 1, 3, 2, 4, 5)), (B, Hi // p, Wi // p, p * p * Ci))
        return self.proj(t)

    def __call__(self, img) -> Tensor:
        return self.norm(self.tokens(img))


def patch_embed(image, module: PatchEmbed) -> Tensor:
    image = ad.as_tensor(image)
    if image.ndim == 3:
        out = module(ad.reshape(image, (1,) + image.shape))
        return ad.reshape(out, out.shape[1:])
    return module(image)


class PatchMerging(Module):
    """2x2 neighbourhood concat (4C) -> layer norm -> linear to 2C."""

    def __init__(self, dim: int):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, bias=False)

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        H, W = x.shape[1], x.shape[2]
        x = ad.pad_spatial(x, H % 2, W % 2)
        parts = [ad.getitem(x, (slice(None), slice(r, None, 2), slice(c, None, 2)))
                 for r, c in ((0, 0), (1, 0), (0, 1), (1, 1))]
        return self.reduction(self.norm(ad.concat(parts, axis=-1)))


class Stage(Module):
    def __init__(self, blocks: list, downsample):
        self.blocks = blocks
        self.downsample = downsample

    def __call__(self, x, trace=None):
        for blk in self.blocks:
            x = blk(x, trace=trace)
        if self.downsample is not None:
            x = self.downsample(x)
        return x


class Backbone(Module):
    """Patch embed -> stages (patch merging between them) -> norm -> mean pool -> head."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.patch_embed = PatchEmbed(config.patch_size, config.in_chans, config.embed_dim)
        stages, layer_id = [], 0
        n_stages = len(config.depths)
        for i, (depth, dim, heads) in enumerate(zip(config.depths, config.dims, config.heads), 1):
            tog = config.stage_toggles(i)
            blocks = []
            for j in range(depth):
                shift = config.window // 2 if (tog.shift and j % 2 == 1) else 0
                blocks.append(TransformerBlock(dim, heads, config.window, config.mlp_ratio, tog, shift,
                                               config.norm_mode, layer_id))
                layer_id += 1
            stages.append(Stage(blocks, PatchMerging(dim) if i < n_stages else None))
        self.stages = stages
        self.norm = LayerNorm(config.dims[-1])
        self.head = Linear(config.dims[-1], config.num_classes)

    @property
    def blocks(self) -> list:
        return [b for s in self.stages for b in s.blocks]

    @property
    def vsa_blocks(self) -> list:
        return [b for b in self.blocks if b.is_vsa]

    @property
    def dtype(self):
        return self.head.weight.data.dtype

    def set_coord_grad(self, enabled: bool) -> None:
        """Test hook: detach sampling coordinates from the graph when False."""
        for b in self.vsa_blocks:
            b.attn.coord_grad = bool(enabled)

    def check_input(self, images) -> Tensor:
        images = ad.as_tensor(images)
        if images.ndim == 3:
            images = ad.reshape(images, (1,) + images.shape)
        c = self.config
        want = (c.img_size, c.img_size, c.in_chans)
        if images.ndim != 4 or tuple(images.shape[1:]) != want:
            raise ConfigError(f"expected images [B, {want[0]}, {want[1]}, {want[2]}], got {images.shape}")
        if images.dtype != self.dtype:
            images = ad.Tensor(images.data.astype(self.dtype))
        return images

    def features(self, images, trace=None) -> Tensor:
        x = self.patch_embed(self.check_input(images))
        for stage in self.stages:
            x = stage(x, trace=trace)
        return x

    def __call__(self, images, trace=None) -> Tensor:
        x = self.norm(self.features(images, trace))
        return self.head(ad.mean(x, axis=(1, 2)))


def build_model(config: ModelConfig, seed: int = 0, materialize: bool = True, dtype=np.float64) -> Backbone:
    model = Backbone(config)
    if materialize:
        model.initialize(seed, dtype=dtype)
    return model


def forward_classify(model: Backbone, image) -> np.ndarray:
    """Logits for one image ``[H, W, 3]`` (-> ``[K]``) or a batch (-> ``[B, K]``)."""
    single = np.ndim(image.data if isinstance(image, Tensor) else image) == 3
    with ad.no_grad():
        logits = model(image).data
    return logits[0] if single else logits
