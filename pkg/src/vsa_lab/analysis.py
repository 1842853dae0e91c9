"""Parameter / FLOP accounting, scale statistics and window export.

FLOPs are counted in multiply-accumulates (one MAC = one unit). Norms,
softmax, activations and the relative-position bias add are tallied in a
separate ``misc`` column and left out of the headline total.
"""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .backbone import Backbone, ModelConfig
from .errors import ContractError
from .windowing import WindowGrid

CPE_TAPS = 49


def analytic_extra_cost(H: int, W: int, C: int, N: int, w: int) -> float:
    """Extra MACs of one VSA layer over window attention: ``(54 + 4N/w^2) HWC``."""
    return (54.0 + 4.0 * N / (w * w)) * H * W * C


# -- parameters -------------------------------------------------------------------

@dataclass
class ParamReport:
    rows: "OrderedDict[str, int]"

    @property
    def total(self) -> int:
        return sum(self.rows.values())


def count_params(model: Backbone) -> ParamReport:
    """Exact per-layer parameter counts (a layer = a parameter's owning module path)."""
    rows: OrderedDict = OrderedDict()
    for name, p in model.named_parameters():
        layer = name.rsplit(".", 1)[0]
        rows[layer] = rows.get(layer, 0) + p.size
    return ParamReport(rows)


# -- flops ------------------------------------------------------------------------

@dataclass
class CostRow:
    name: str
    flop_units: int
    misc_units: int = 0
    vsa_extra: bool = False


@dataclass
class CostReport:
    rows: list = field(default_factory=list)
    vsa_extra_analytic: float = 0.0

    @property
    def total(self) -> int:
        return sum(r.flop_units for r in self.rows)

    @property
    def misc_total(self) -> int:
        return sum(r.misc_units for r in self.rows)

    @property
    def vsa_extra_flop_units(self) -> int:
        return sum(r.flop_units for r in self.rows if r.vsa_extra)

    @property
    def overhead_ratio(self) -> float:
        base = self.total - self.vsa_extra_flop_units
        return self.vsa_extra_flop_units / base if base else 0.0

    def add(self, name, units, misc=0, extra=False):
        self.rows.append(CostRow(name, int(units), int(misc), extra))


def _block_cost(rep: CostReport, prefix: str, H: int, W: int, C: int, N: int, w: int,
                mlp_ratio: float, toggles) -> None:
    grid = WindowGrid(H, W, w)
    L, nW = grid.tokens, grid.n_windows
    hidden = int(round(C * mlp_ratio))
    if toggles.cpe:
        rep.add(f"{prefix}.cpe", w * w * H * W * C, extra=True)
    rep.add(f"{prefix}.norm1", 0, misc=H * W * C)
    rep.add(f"{prefix}.attn.qkv", H * W * C * 3 * C)
    if toggles.vsr:
        rep.add(f"{prefix}.attn.vsr.pool", H * W * C, extra=True)
        rep.add(f"{prefix}.attn.vsr.conv", nW * C * 4 * N, extra=True)
        rep.add(f"{prefix}.attn.sample", 4 * nW * L * C, extra=True)
    rep.add(f"{prefix}.attn.scores", nW * L * L * C, misc=0 if toggles.vsr else nW * N * L * L)
    rep.add(f"{prefix}.attn.softmax", 0, misc=nW * N * L * L)
    rep.add(f"{prefix}.attn.context", nW * L * L * C)
    rep.add(f"{prefix}.attn.proj", H * W * C * C)
    rep.add(f"{prefix}.norm2", 0, misc=H * W * C)
    rep.add(f"{prefix}.mlp.fc1", H * W * C * hidden, misc=H * W * hidden)
    rep.add(f"{prefix}.mlp.fc2", H * W * hidden * C)


def count_flops(model_or_config, img_size: Optional[int] = None) -> CostReport:
    """Symbolic MAC tally for one image."""
    cfg: ModelConfig = model_or_config.config if isinstance(model_or_config, Backbone) else model_or_config
    img = img_size or cfg.img_size
    p = cfg.patch_size
    H = W = img // p
    rep = CostReport()
    C = cfg.embed_dim
    rep.add("patch_embed.proj", H * W * p * p * cfg.in_chans * C)
    rep.add("patch_embed.norm", 0, misc=H * W * C)
    layer = 0
    for i, (depth, C, N) in enumerate(zip(cfg.depths, cfg.dims, cfg.heads), 1):
        tog = cfg.stage_toggles(i)
        for j in range(depth):
            _block_cost(rep, f"stages.{i - 1}.blocks.{j}", H, W, C, N, cfg.window, cfg.mlp_ratio, tog)
            if tog.vsr and tog.cpe and cfg.window * cfg.window == CPE_TAPS:
                rep.vsa_extra_analytic += analytic_extra_cost(H, W, C, N, cfg.window)
            layer += 1
        if i < len(cfg.depths):
            Hm, Wm = -(-H // 2), -(-W // 2)
            rep.add(f"stages.{i - 1}.downsample.norm", 0, misc=Hm * Wm * 4 * C)
            rep.add(f"stages.{i - 1}.downsample.reduction", Hm * Wm * 4 * C * 2 * C)
            H, W = Hm, Wm
    C = cfg.dims[-1]
    rep.add("norm", 0, misc=H * W * C)
    rep.add("head", C * cfg.num_classes)
    return rep


# -- scale statistics ---------------------------------------------------------------

@dataclass
class ScaleHistogram:
    """Counts per axis over ``bins`` uniform bins plus an under- and overflow bin."""

    layer: int
    head: int
    edges: np.ndarray
    counts_x: np.ndarray
    counts_y: np.ndarray

    def bins(self):
        lo = np.concatenate([[-np.inf], self.edges])
        hi = np.concatenate([self.edges, [np.inf]])
        return lo, hi


def _histogram(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    width = edges[1] - edges[0]
    idx = np.floor((values - edges[0]) / width).astype(np.int64) + 1
    idx = np.clip(idx, 0, len(edges))
    return np.bincount(idx.ravel(), minlength=len(edges) + 1)


def trace_transforms(model: Backbone, images) -> list:
    """Run a forward pass and return ``[(layer_id, WindowTransform), ...]``."""
    if not model.vsa_blocks:
        raise ContractError("model has no VSA blocks")
    trace: list = []
    with ad.no_grad():
        model(images, trace=trace)
    return trace


def collect_scale_stats(model: Backbone, images, bins: int = 64, lo: float = 0.0, hi: float = 4.0) -> list:
    edges = np.linspace(lo, hi, bins + 1)
    out = []
    for layer, tf in trace_transforms(model, images):
        for h in range(tf.scale.shape[2]):
            out.append(ScaleHistogram(layer, h, edges,
                                      _histogram(tf.scale[:, :, h, 0], edges),
                                      _histogram(tf.scale[:, :, h, 1], edges)))
    return out


def write_scale_csv(histograms: Iterable[ScaleHistogram], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["layer", "head", "axis", "bin_lo", "bin_hi", "count"])
        for hist in histograms:
            blo, bhi = hist.bins()
            for axis, counts in (("x", hist.counts_x), ("y", hist.counts_y)):
                for a, b, c in zip(blo, bhi, counts):
                    wr.writerow([hist.layer, hist.head, axis, repr(float(a)), repr(float(b)), int(c)])
    return path


# -- window rectangles ----------------------------------------------------------------

def export_window_rects(model: Backbone, images, image_ids=None) -> list:
    """One record per (image, VSA layer, head, window) with default/target rects."""
    images = np.asarray(images.data if isinstance(images, ad.Tensor) else images)
    if images.ndim == 3:
        images = images[None]
    ids = list(range(len(images))) if image_ids is None else list(image_ids)
    records = []
    for layer, tf in trace_transforms(model, images):
        default = tf.default_rects()
        target = tf.target_rects()
        B, nW, N, _ = target.shape
        for b in range(B):
            for h in range(N):
                for i in range(nW):
                    records.append({
                        "layer": int(layer), "head": int(h), "window": int(i), "image": ids[b],
                        "default": [float(v) for v in default[i]],
                        "target": [float(v) for v in target[b, i, h]],
                    })
    return records


def write_jsonl(records: Iterable[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path
