"""``vsa-lab`` command line interface."""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .analysis import collect_scale_stats, count_flops, count_params, export_window_rects, write_jsonl, write_scale_csv
from .backbone import PRESETS, ModelConfig, build_model, preset
from .blocks import Toggles
from .checkpoint import read_checkpoint
from .config import int_list, load_config
from .data import SyntheticScaleTask, gen_synthetic_dataset
from .errors import VSAError
from .train import TrainConfig, evaluate, gradcheck, load_dataset, train


def _model_config(args, default_preset: str = "swin_tiny") -> ModelConfig:
    if getattr(args, "config", None):
        cfg = TrainConfig.from_dict(load_config(args.config)).model
        if args.preset:
            cfg = replace(PRESETS[args.preset], vsa_stages=cfg.vsa_stages, toggles=cfg.toggles)
    else:
        cfg = preset(args.preset or default_preset)
    kw = {}
    if getattr(args, "vsa_stages", None) is not None:
        kw["vsa_stages"] = int_list(args.vsa_stages)
    if getattr(args, "toggles", None) is not None:
        kw["toggles"] = Toggles.parse(args.toggles)
    if getattr(args, "img_size", None):
        kw["img_size"] = args.img_size
    return replace(cfg, **kw) if kw else cfg


def _train_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_dict(load_config(args.config))
    else:
        cfg = TrainConfig(model=preset(args.preset or "swin_pico", vsa_stages=(1, 2, 3, 4)))
    kw = {"model": _model_config(args, "swin_pico") if (args.preset or args.vsa_stages or args.toggles)
          else cfg.model}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out:
        kw["out_dir"] = args.out
    if args.steps is not None:
        kw["total_steps"] = args.steps
        kw["warmup_steps"] = min(cfg.warmup_steps, args.steps)
    if args.batch_size is not None:
        kw["batch_size"] = args.batch_size
    return replace(cfg, **kw)


def _load_model(args, default_preset: str):
    if getattr(args, "checkpoint", None):
        return read_checkpoint(args.checkpoint).model
    return build_model(_model_config(args, default_preset), seed=args.seed or 0)


def _probe_images(model, args) -> np.ndarray:
    cfg = model.config
    task = SyntheticScaleTask(img_size=cfg.img_size, num_classes=max(2, min(cfg.num_classes, 4)),
                              n_samples=2 * args.n_images)
    ds = gen_synthetic_dataset(task, args.seed or 0)
    return ds.X.astype(model.dtype)


def _emit(args, payload: dict, lines: list) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    else:
        print("\n".join(lines))


# -- subcommands ----------------------------------------------------------------

def cmd_params(args) -> int:
    cfg = _model_config(args)
    rep = count_params(build_model(cfg, materialize=False))
    lines = [f"{name}\t{n}" for name, n in rep.rows.items()] if args.verbose else []
    lines.append(f"total_params: {rep.total} ({rep.total / 1e6:.2f}M)")
    _emit(args, {"total_params": rep.total, "rows": rep.rows if args.verbose else None}, lines)
    return 0


def cmd_flops(args) -> int:
    cfg = _model_config(args)
    rep = count_flops(cfg, args.img_size or cfg.img_size)
    lines = [f"{r.name}\t{r.flop_units}\t{r.misc_units}" for r in rep.rows] if args.verbose else []
    lines += [
        f"total_flop_units: {rep.total} ({rep.total / 1e9:.2f}G)",
        f"misc_units: {rep.misc_total}",
        f"vsa_extra_flop_units: {rep.vsa_extra_flop_units}",
        f"vsa_extra_analytic: {rep.vsa_extra_analytic:.1f}",
        f"overhead_ratio: {rep.overhead_ratio:.5f}",
    ]
    _emit(args, {"total_flop_units": rep.total, "misc_units": rep.misc_total,
                 "vsa_extra_flop_units": rep.vsa_extra_flop_units,
                 "vsa_extra_analytic": rep.vsa_extra_analytic, "overhead_ratio": rep.overhead_ratio}, lines)
    return 0


def cmd_gradcheck(args) -> int:
    if args.vsa_stages is None and not args.config:
        args.vsa_stages = "1,2"
    cfg = _model_config(args, "swin_nano")
    rep = gradcheck(cfg, tolerance=args.tolerance, seed=args.seed or 0, max_entries=args.max_entries)
    _emit(args, {"passed": rep.passed, "max_rel_err": rep.max_rel_err,
                 "vsr_grad_max": rep.vsr_grad_max, "vsr_grad_ablated_max": rep.vsr_grad_ablated_max},
          rep.lines())
    return 0 if rep.passed else 1


def cmd_train(args) -> int:
    cfg = _train_config(args)
    res = train(cfg)
    ds = load_dataset(cfg)
    train_acc = evaluate(res.model, ds.X.astype(res.model.dtype), ds.y)["top1"]
    _emit(args, {"metrics": str(res.metrics_path), "checkpoint": str(res.checkpoint_path),
                 "val_top1": res.final_val_top1, "train_top1": train_acc},
          [f"metrics: {res.metrics_path}", f"checkpoint: {res.checkpoint_path}",
           f"final_loss: {res.losses[-1]:.6f}", f"val_top1: {res.final_val_top1}", f"train_top1: {train_acc}"])
    return 0


def cmd_eval(args) -> int:
    ck = read_checkpoint(args.checkpoint)
    model = ck.model
    if args.config:
        tc = TrainConfig.from_dict(load_config(args.config))
    else:
        tc = TrainConfig(model=model.config, seed=ck.seed)
    ds = load_dataset(tc)
    X, y = (ds.X, ds.y) if args.split == "train" else (ds.X_val, ds.y_val)
    rep = evaluate(model, X.astype(model.dtype), y)
    _emit(args, rep, [f"top1: {rep['top1']}", f"top5: {rep['top5']}",
                      "per_class: " + ",".join("nan" if a is None else f"{a:.4f}" for a in rep["per_class"])])
    return 0


def cmd_stats_scales(args) -> int:
    model = _load_model(args, "swin_pico")
    hists = collect_scale_stats(model, _probe_images(model, args), bins=args.bins)
    path = write_scale_csv(hists, Path(args.out or ".") / "scale_hist.csv")
    lines = [f"csv: {path}"]
    for h in hists:
        nz = int(max((h.counts_x > 0).sum(), (h.counts_y > 0).sum()))
        lines.append(f"layer={h.layer} head={h.head} nonzero_bins={nz} windows={int(h.counts_x.sum())}")
    _emit(args, {"csv": str(path), "histograms": len(hists)}, lines)
    return 0


def cmd_viz_windows(args) -> int:
    model = _load_model(args, "swin_pico")
    recs = export_window_rects(model, _probe_images(model, args))
    path = write_jsonl(recs, Path(args.out or ".") / "windows.jsonl")
    _emit(args, {"jsonl": str(path), "records": len(recs)}, [f"jsonl: {path}", f"records: {len(recs)}"])
    return 0


def cmd_bench(args) -> int:
    cfg = _model_config(args, "swin_pico")
    vsa_cfg = replace(cfg, vsa_stages=cfg.vsa_stages or tuple(range(1, len(cfg.depths) + 1)))
    base_cfg = replace(cfg, vsa_stages=())
    x = np.random.default_rng(0).random((args.batch_size, cfg.img_size, cfg.img_size, cfg.in_chans))
    times = {}
    for label, c in (("baseline", base_cfg), ("vsa", vsa_cfg)):
        m = build_model(c, seed=0, dtype=np.float32)
        xb = x.astype(np.float32)
        with ad.no_grad():
            m(xb)
            t0 = time.perf_counter()
            for _ in range(args.repeats):
                m(xb)
        times[label] = (time.perf_counter() - t0) / args.repeats
    slow = times["vsa"] / times["baseline"] - 1.0
    _emit(args, {"baseline_s": times["baseline"], "vsa_s": times["vsa"], "relative_overhead": slow},
          [f"baseline: {times['baseline'] * 1e3:.1f} ms/batch", f"vsa: {times['vsa'] * 1e3:.1f} ms/batch",
           f"relative_overhead: {slow:+.3f} (informational; hardware dependent)"])
    return 0


def cmd_gen_data(args) -> int:
    cfg = _model_config(args, "swin_pico")
    task = SyntheticScaleTask(img_size=cfg.img_size, num_classes=cfg.num_classes, n_samples=args.n_samples)
    ds = gen_synthetic_dataset(task, args.seed or 0)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.npz"
    np.savez(path, X=ds.X, y=ds.y, X_val=ds.X_val, y_val=ds.y_val)
    digest = hashlib.sha256(ds.X[0].tobytes()).hexdigest()
    _emit(args, {"path": str(path), "first_image_sha256": digest},
          [f"dataset: {path}", f"train: {len(ds.y)} val: {len(ds.y_val)}", f"first_image_sha256: {digest}"])
    return 0


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "flops": cmd_flops,
    "params": cmd_params, "stats-scales": cmd_stats_scales, "viz-windows": cmd_viz_windows,
    "bench": cmd_bench, "gen-data": cmd_gen_data,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="checkpoint file")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--vsa-stages", dest="vsa_stages", help="e.g. 3,4 or none")
    common.add_argument("--toggles", help="subset of cpe,vsr,shift (or none)")
    common.add_argument("--img-size", dest="img_size", type=int)
    common.add_argument("--json", action="store_true", help="print one JSON object")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vsa-lab", description="Varied-size window attention lab.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "train":
            p.add_argument("--steps", type=int)
            p.add_argument("--batch-size", dest="batch_size", type=int)
        if name == "eval":
            p.add_argument("--split", choices=("train", "val"), default="val")
        if name == "gradcheck":
            p.add_argument("--tolerance", type=float, default=1e-4)
            p.add_argument("--max-entries", dest="max_entries", type=int, default=6)
        if name in ("stats-scales", "viz-windows"):
            p.add_argument("--n-images", dest="n_images", type=int, default=8 if name == "stats-scales" else 1)
        if name == "stats-scales":
            p.add_argument("--bins", type=int, default=64)
        if name == "bench":
            p.add_argument("--repeats", type=int, default=5)
            p.add_argument("--batch-size", dest="batch_size", type=int, default=8)
        if name == "gen-data":
            p.add_argument("--n-samples", dest="n_samples", type=int, default=1024)
    return parser


def _thread_limit():
    n = os.environ.get("VSA_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not args.checkpoint:
        print("error: ContractError: eval needs --checkpoint", file=sys.stderr)
        return 2
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except (VSAError, KeyError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
