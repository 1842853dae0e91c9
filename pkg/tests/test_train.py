import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from vsa_lab import autodiff as ad
from vsa_lab.backbone import build_model, preset
from vsa_lab.config import dump_config, int_list, load_config, parse_config, as_bool
from vsa_lab.data import Dataset
from vsa_lab.errors import ConfigError, TrainingError
from vsa_lab.train import (METRICS_HEADER, PARAM_CLASSES, TrainConfig, accuracy_report, evaluate, fit_model,
                           gradcheck, param_class, train)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_parse_config_rules():
    vals = parse_config("# c\nmodel.window = 3  # trailing\n\ntrain.lr=0.5\n")
    assert vals == {"model.window": "3", "train.lr": "0.5"}
    assert parse_config(dump_config(vals)) == vals
    for bad in ("model.window 3", "model.window = 3\nmodel.window = 4", ".x = 1"):
        with pytest.raises(ConfigError):
            parse_config(bad)
    assert int_list("1, 2,3") == (1, 2, 3) and int_list("none") == ()
    assert as_bool("yes") and not as_bool("0")
    with pytest.raises(ConfigError):
        int_list("1,a")


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_shipped_configs_round_trip(name):
    cfg = TrainConfig.from_dict(load_config(CONFIGS / name))
    again = TrainConfig.from_dict(parse_config(cfg.to_text()))
    assert again == cfg
    cfg.model.validate()


def test_canonical_config_contents():
    cfg = TrainConfig.from_dict(load_config(CONFIGS / "swin_pico_vsa_synthetic.cfg"))
    assert cfg.model == preset("swin_pico", vsa_stages=(1, 2, 3, 4))
    assert cfg.total_steps == 2000 and cfg.label_smoothing == 0.1


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(warmup_steps=10, total_steps=5)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"train.momentum": "0.9"})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"optim.lr": "0.9"})


def test_param_classes_cover_every_parameter():
    m = build_model(preset("swin_nano", vsa_stages=(1, 2)), materialize=False)
    seen = {param_class(n) for n, _ in m.named_parameters()}
    assert seen == {c for c, _ in PARAM_CLASSES}


def test_accuracy_report():
    logits = np.eye(6)[[0, 1, 2, 3, 4, 5, 0]]
    rep = accuracy_report(logits, np.array([0, 1, 2, 3, 4, 5, 1]), 6)
    assert rep["top1"] == pytest.approx(6 / 7)
    assert rep["top5"] >= rep["top1"]
    assert rep["per_class"][1] == 0.5
    assert accuracy_report(logits[:, :4], np.array([0, 1, 2, 3, 0, 0, 0]), 4)["top5"] is None


def test_random_init_is_at_chance():
    rng = np.random.default_rng(0)
    m = build_model(preset("swin_nano", num_classes=10), seed=0)
    X, y = rng.random((1000, 16, 16, 3)), rng.integers(0, 10, 1000)
    before = m.state_dict()
    rep = evaluate(m, X, y)
    assert abs(rep["top1"] - 0.1) <= 0.05
    assert rep["top5"] >= rep["top1"]
    assert all(np.array_equal(before[k], v) for k, v in m.state_dict().items())
    with pytest.raises(ConfigError):
        evaluate(m, rng.random((2, 32, 32, 3)), np.zeros(2))


def test_memorises_tiny_set():
    rng = np.random.default_rng(1)
    m = build_model(preset("swin_nano", vsa_stages=(1, 2, 3, 4)), seed=0)
    X, y = rng.random((8, 16, 16, 3)), np.arange(8) % 4
    fit_model(m, X, y, steps=120, batch_size=8, lr=3e-3, warmup_steps=5, weight_decay=0.0, label_smoothing=0.0)
    assert evaluate(m, X, y)["top1"] == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_aborts_with_step_and_config():
    m = build_model(preset("swin_nano"), seed=0)
    X = np.full((4, 16, 16, 3), np.inf)
    with pytest.raises(TrainingError, match=r"step 0.*model.window = 3"):
        fit_model(m, X, np.zeros(4, int), steps=2, batch_size=2, lr=1e-3, config_echo="model.window = 3\n")


def _small_cfg(tmp_path, **kw):
    base = TrainConfig(model=preset("swin_nano", vsa_stages=(1, 2, 3, 4)), total_steps=12, warmup_steps=3,
                       batch_size=4, eval_interval=5, data_n_samples=32, out_dir=str(tmp_path))
    return replace(base, **kw)


def test_train_writes_artifacts(tmp_path):
    res = train(_small_cfg(tmp_path))
    rows = list(csv.reader(res.metrics_path.open()))
    assert rows[0] == list(METRICS_HEADER) == ["step", "lr", "loss", "val_top1"]
    assert len(rows) == 13 and rows[1][1] == "0.0"
    assert [r[0] for r in rows[1:] if r[3]] == ["4", "9", "11"]
    assert abs(float(rows[1][2]) - np.log(4)) < 0.1
    assert (tmp_path / "checkpoint.ckpt").exists()
    echoed = TrainConfig.from_dict(load_config(tmp_path / "config.cfg"))
    assert echoed == _small_cfg(tmp_path)


def test_train_prefetch_is_bitwise_identical(tmp_path):
    a = train(_small_cfg(tmp_path / "a"))
    b = train(_small_cfg(tmp_path / "b", prefetch=2))
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()


def test_train_rejects_mismatched_dataset(tmp_path):
    ds = Dataset(np.zeros((4, 32, 32, 3), np.float32), np.zeros(4, int))
    with pytest.raises(ConfigError):
        train(_small_cfg(tmp_path), ds)


def test_gradcheck_report_baseline_and_vsa():
    rep = gradcheck(preset("swin_nano", vsa_stages=(3, 4)), max_entries=3)
    assert rep.passed
    assert set(rep.max_rel_err) == {c for c, _ in PARAM_CLASSES}
    assert rep.vsr_grad_max > 0 and rep.vsr_grad_ablated_max == 0.0
    assert rep.lines()[-1].startswith("PASS")
    base = gradcheck(preset("swin_nano"), max_entries=2)
    assert base.passed and "vsr_conv" not in base.max_rel_err


def test_coord_grad_hook_toggles_model():
    m = build_model(preset("swin_nano", vsa_stages=(1,)), seed=0)
    m.set_coord_grad(False)
    assert all(not b.attn.coord_grad for b in m.vsa_blocks)
    x = np.random.default_rng(0).random((2, 16, 16, 3))
    m.vsa_blocks[0].attn.vsr.weight.data[...] = 0.1
    loss = ad.sum(m(x))
    loss.backward()
    assert np.all(m.vsa_blocks[0].attn.vsr.weight.grad == 0.0)
