"""Training loop, evaluation and the finite-difference gradient check."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .backbone import Backbone, ModelConfig, build_model
from .checkpoint import save_checkpoint
from .config import dump_config, section
from .data import Dataset, SyntheticScaleTask, batch_indices, gen_synthetic_dataset, iterate_batches, load_cifar10_binary
from .errors import ConfigError, TrainingError
from .optim import AdamW, cosine_schedule

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "lr", "loss", "val_top1")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    warmup_steps: int = 100
    total_steps: int = 2000
    min_lr: float = 0.0
    batch_size: int = 16
    seed: int = 0
    label_smoothing: float = 0.1
    eval_interval: int = 200
    dtype: str = "float32"
    prefetch: int = 0
    out_dir: str = "runs/default"
    data_kind: str = "synthetic"
    data_n_samples: int = 1024
    data_noise: float = 0.1
    data_dir: str = ""

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"warmup_steps ({self.warmup_steps}) must be within [0, total_steps]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.data_kind not in ("synthetic", "cifar10"):
            raise ConfigError(f"unknown data.kind {self.data_kind!r}")

    _TRAIN_KEYS = {
        "lr": float, "weight_decay": float, "warmup_steps": int, "total_steps": int, "min_lr": float,
        "batch_size": int, "seed": int, "label_smoothing": float, "eval_interval": int, "dtype": str,
        "prefetch": int, "out_dir": str,
    }
    _DATA_KEYS = {"kind": str, "n_samples": int, "noise": float, "dir": str}

    def to_dict(self) -> dict:
        out = dict(self.model.to_dict())
        for key in self._TRAIN_KEYS:
            out[f"train.{key}"] = repr(getattr(self, key)) if isinstance(getattr(self, key), float) else str(getattr(self, key))
        out["train.betas"] = ",".join(repr(float(b)) for b in self.betas)
        for key in self._DATA_KEYS:
            val = getattr(self, f"data_{key}")
            out[f"data.{key}"] = repr(val) if isinstance(val, float) else str(val)
        return out

    def to_text(self) -> str:
        return dump_config(self.to_dict())

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        kw = {"model": ModelConfig.from_dict(values)}
        for key, val in section(values, "train").items():
            if key == "betas":
                kw["betas"] = tuple(float(v) for v in val.split(","))
            elif key in cls._TRAIN_KEYS:
                kw[key] = cls._TRAIN_KEYS[key](val)
            else:
                raise ConfigError(f"unknown train key {key!r}")
        for key, val in section(values, "data").items():
            if key not in cls._DATA_KEYS:
                raise ConfigError(f"unknown data key {key!r}")
            kw[f"data_{key}"] = cls._DATA_KEYS[key](val)
        unknown = [k for k in values if k.split(".", 1)[0] not in ("model", "train", "data")]
        if unknown:
            raise ConfigError(f"unknown config section in key {unknown[0]!r}")
        return cls(**kw)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def load_dataset(cfg: TrainConfig) -> Dataset:
    if cfg.data_kind == "cifar10":
        return load_cifar10_binary(cfg.data_dir)
    task = SyntheticScaleTask(img_size=cfg.model.img_size, num_classes=cfg.model.num_classes,
                              n_samples=cfg.data_n_samples, noise=cfg.data_noise)
    return gen_synthetic_dataset(task, cfg.seed)


# -- evaluation -----------------------------------------------------------------

def predict_logits(model: Backbone, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    with ad.no_grad():
        for i in range(0, len(X), batch_size):
            out.append(model(X[i:i + batch_size]).data)
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def accuracy_report(logits: np.ndarray, y: np.ndarray, num_classes: int) -> dict:
    y = np.asarray(y)
    pred = logits.argmax(axis=1)
    rep = {"top1": float((pred == y).mean()) if len(y) else 0.0, "top5": None}
    if num_classes >= 5:
        top5 = np.argsort(-logits, axis=1, kind="stable")[:, :5]
        rep["top5"] = float((top5 == y[:, None]).any(axis=1).mean())
    rep["per_class"] = [float((pred[y == k] == k).mean()) if np.any(y == k) else None for k in range(num_classes)]
    return rep


def evaluate(model: Backbone, X: np.ndarray, y: np.ndarray, batch_size: int = 64) -> dict:
    """Top-1 (top-5 when K >= 5) and per-class accuracy; read-only on the model."""
    cfg = model.config
    if X.ndim != 4 or X.shape[1:] != (cfg.img_size, cfg.img_size, cfg.in_chans):
        raise ConfigError(f"dataset images {X.shape[1:]} do not match model input "
                          f"{(cfg.img_size, cfg.img_size, cfg.in_chans)}")
    return accuracy_report(predict_logits(model, X, batch_size), y, cfg.num_classes)


# -- training -------------------------------------------------------------------

def fit_model(model: Backbone, X: np.ndarray, y: np.ndarray, *, steps: int, batch_size: int, lr: float,
              warmup_steps: int = 0, min_lr: float = 0.0, weight_decay: float = 0.05, betas=(0.9, 0.999),
              label_smoothing: float = 0.1, seed: int = 0, prefetch: int = 0,
              on_step: Optional[Callable] = None, config_echo: str = "") -> AdamW:
    """Run ``steps`` AdamW updates; ``on_step(step, lr, loss)`` is called after each."""
    opt = AdamW(model.named_parameters(), lr=lr, betas=betas, weight_decay=weight_decay)
    order = batch_indices(len(y), min(batch_size, len(y)), seed + 1, steps)
    for step, (xb, yb) in enumerate(iterate_batches(X, y, order, prefetch)):
        cur_lr = cosine_schedule(step, lr, warmup_steps, steps, min_lr)
        loss = ad.cross_entropy(model(xb), yb, label_smoothing)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at step {step}; config: {config_echo.strip() or '-'}"
                                .replace("\n", "; "))
        opt.zero_grad()
        loss.backward()
        opt.step(cur_lr)
        if on_step is not None:
            on_step(step, cur_lr, value)
    return opt


@dataclass
class TrainResult:
    model: Backbone
    metrics_path: Path
    checkpoint_path: Path
    losses: list
    final_val_top1: Optional[float]


def train(cfg: TrainConfig, dataset: Optional[Dataset] = None) -> TrainResult:
    """Train from scratch; writes ``metrics.csv`` and ``checkpoint.ckpt`` under ``out_dir``."""
    ds = dataset if dataset is not None else load_dataset(cfg)
    mc = cfg.model
    if ds.X.shape[1:3] != (mc.img_size, mc.img_size):
        raise ConfigError(f"dataset image size {ds.X.shape[1:3]} does not match model img_size {mc.img_size}")
    dtype = np.dtype(cfg.dtype)
    model = build_model(mc, seed=cfg.seed, dtype=dtype)
    X = ds.X.astype(dtype, copy=False)
    Xv = ds.X_val.astype(dtype, copy=False) if ds.X_val is not None else None

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text())
    metrics_path = out / "metrics.csv"
    losses: list = []
    last_val = [None]

    with metrics_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)

        def on_step(step, lr, loss):
            losses.append(loss)
            val = ""
            last = step == cfg.total_steps - 1
            if Xv is not None and cfg.eval_interval > 0 and ((step + 1) % cfg.eval_interval == 0 or last):
                last_val[0] = evaluate(model, Xv, ds.y_val)["top1"]
                val = repr(last_val[0])
                log.info("step %d loss %.4f val_top1 %.4f", step, loss, last_val[0])
            writer.writerow([step, repr(float(lr)), repr(loss), val])

        opt = fit_model(model, X, ds.y, steps=cfg.total_steps, batch_size=cfg.batch_size, lr=cfg.lr,
                        warmup_steps=cfg.warmup_steps, min_lr=cfg.min_lr, weight_decay=cfg.weight_decay,
                        betas=cfg.betas, label_smoothing=cfg.label_smoothing, seed=cfg.seed,
                        prefetch=cfg.prefetch, on_step=on_step, config_echo=cfg.to_text())
    ckpt = save_checkpoint(model, out / "checkpoint.ckpt", optimizer=opt, step=cfg.total_steps, seed=cfg.seed)
    return TrainResult(model, metrics_path, ckpt, losses, last_val[0])


# -- gradient check -----------------------------------------------------------------

PARAM_CLASSES = (
    ("vsr_conv", r"\.attn\.vsr\."),
    ("cpe_kernel", r"\.cpe\.kernel$"),
    ("rel_pos_table", r"\.rel_pos\.table$"),
    ("qkv", r"\.attn\.qkv\."),
    ("attn_proj", r"\.attn\.proj\."),
    ("ffn", r"\.mlp\."),
    ("patch_embed", r"^patch_embed\.proj\."),
    ("merge", r"\.downsample\.reduction\."),
    ("norm", r"norm\d?\.(weight|bias)$"),
    ("head", r"^head\."),
)


def param_class(name: str) -> str:
    for cls, pattern in PARAM_CLASSES:
        if re.search(pattern, name):
            return cls
    return "other"


@dataclass
class GradcheckReport:
    max_rel_err: dict
    tolerance: float
    vsr_grad_max: float
    vsr_grad_ablated_max: float
    checked_entries: int

    @property
    def passed(self) -> bool:
        ok = all(err < self.tolerance for err in self.max_rel_err.values())
        if "vsr_conv" in self.max_rel_err:
            ok = ok and self.vsr_grad_max > 0.0 and self.vsr_grad_ablated_max == 0.0
        return ok

    def lines(self) -> list:
        out = [f"{cls:14s} max_rel_err={err:.3e} {'PASS' if err < self.tolerance else 'FAIL'}"
               for cls, err in sorted(self.max_rel_err.items())]
        if "vsr_conv" in self.max_rel_err:
            out.append(f"vsr grads: max|g|={self.vsr_grad_max:.3e}, with coordinate gradients disabled "
                       f"max|g|={self.vsr_grad_ablated_max:.3e}")
        out.append(f"{'PASS' if self.passed else 'FAIL'} tolerance={self.tolerance:g} "
                   f"entries={self.checked_entries}")
        return out


def perturb_vsr(model: Backbone, seed: int, std: float = 0.1) -> None:
    """Move VSR weights off zero so target windows are not the identity."""
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters():
        if ".attn.vsr." in name:
            p.data = rng.normal(0.0, std, size=p.shape).astype(p.data.dtype)


def gradcheck(config: ModelConfig, tolerance: float = 1e-4, seed: int = 0, max_entries: int = 6,
              eps: float = 1e-5, batch: int = 2) -> GradcheckReport:
    """Compare analytic gradients with central differences for every parameter class."""
    model = build_model(config, seed=seed, dtype=np.float64)
    perturb_vsr(model, seed + 1)
    rng = np.random.default_rng(seed + 2)
    images = rng.normal(0.0, 1.0, size=(batch, config.img_size, config.img_size, config.in_chans))
    labels = np.arange(batch) % config.num_classes

    def loss_fn():
        return ad.cross_entropy(model(images), labels, 0.1)

    model.zero_grad()
    loss_fn().backward()
    params = list(model.named_parameters())
    analytic = {n: p.grad.copy() for n, p in params}

    per_class: dict = {}
    checked = 0
    with ad.no_grad():
        for name, p in params:
            flat = p.data.reshape(-1)
            picks = np.arange(flat.size) if flat.size <= max_entries else rng.choice(flat.size, max_entries, replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + eps
                lp = float(loss_fn().data)
                flat[i] = orig - eps
                lm = float(loss_fn().data)
                flat[i] = orig
                num = (lp - lm) / (2 * eps)
                a_list, n_list = per_class.setdefault(param_class(name), ([], []))
                a_list.append(analytic[name].reshape(-1)[i])
                n_list.append(num)
                checked += 1
    errs = {}
    for cls, (a, n) in per_class.items():
        a, n = np.asarray(a), np.asarray(n)
        denom = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
        errs[cls] = float(np.abs(a - n).max() / denom)

    vsr_names = [n for n, _ in params if ".attn.vsr." in n]
    vsr_max = max((float(np.abs(analytic[n]).max()) for n in vsr_names), default=0.0)
    ablated = 0.0
    if vsr_names:
        model.set_coord_grad(False)
        try:
            model.zero_grad()
            loss_fn().backward()
            pmap = dict(params)
            ablated = max(float(np.abs(pmap[n].grad).max()) if pmap[n].grad is not None else 0.0
                          for n in vsr_names)
        finally:
            model.set_coord_grad(True)
            model.zero_grad()
    return GradcheckReport(errs, tolerance, vsr_max, ablated, checked)
