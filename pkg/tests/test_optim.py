import math

import numpy as np
import pytest

from vsa_lab.errors import TrainingError
from vsa_lab.nn import Parameter
from vsa_lab.optim import AdamW, adamw_step, cosine_schedule, decays


def test_schedule_endpoints():
    assert cosine_schedule(0, 1e-3, 10, 100) == 0.0
    assert cosine_schedule(10, 1e-3, 10, 100) == 1e-3
    assert cosine_schedule(5, 1e-3, 10, 100) == pytest.approx(5e-4)
    assert cosine_schedule(55, 1e-3, 10, 100) == pytest.approx(5e-4)
    assert cosine_schedule(100, 1e-3, 10, 100, min_lr=1e-5) == pytest.approx(1e-5)
    lrs = [cosine_schedule(s, 1.0, 10, 100) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_zero_grad_zero_decay_is_noop(rng):
    p = {"w": rng.normal(size=(3, 2))}
    before = p["w"].copy()
    state = {}
    for _ in range(3):
        adamw_step(p, {"w": np.zeros((3, 2))}, state, lr=0.1)
    np.testing.assert_array_equal(p["w"], before)


def test_decay_with_zero_grads_scales(rng):
    p = {"w": rng.normal(size=4)}
    w0 = p["w"].copy()
    state = {}
    for _ in range(5):
        adamw_step(p, {"w": np.zeros(4)}, state, lr=0.1, weight_decay=0.2)
    np.testing.assert_allclose(p["w"], w0 * (1 - 0.1 * 0.2) ** 5, rtol=1e-14)


def test_first_step_moves_by_lr_times_sign():
    p = {"w": np.array([1.0, -1.0])}
    adamw_step(p, {"w": np.array([3.0, -0.5])}, {}, lr=0.01, eps=0.0)
    np.testing.assert_allclose(p["w"], [0.99, -0.99])


def test_nan_gradient_names_param():
    with pytest.raises(TrainingError, match="blk.w"):
        adamw_step({"blk.w": np.ones(2)}, {"blk.w": np.array([np.nan, 0.0])}, {}, lr=0.1)


def _param(name, shape, value):
    p = Parameter(shape, ("zeros",))
    p.data = np.full(shape, value)
    p.name = name
    return p


def test_class_optimizer_matches_functional(rng):
    g = rng.normal(size=(2, 3))
    w = _param("a.weight", (2, 3), 0.5)
    opt = AdamW([("a.weight", w)], lr=0.1, weight_decay=0.05)
    ref = {"a.weight": np.full((2, 3), 0.5)}
    state = {}
    for _ in range(3):
        w.grad = g.copy()
        opt.step()
        adamw_step(ref, {"a.weight": g}, state, lr=0.1, weight_decay=0.05)
    np.testing.assert_allclose(w.data, ref["a.weight"], rtol=1e-14)
    assert opt.state["t"] == 3


def test_decay_exclusions():
    assert decays("stages.0.blocks.0.attn.qkv.weight", (8, 24))
    assert decays("stages.0.blocks.0.cpe.kernel", (3, 3, 8))
    assert not decays("stages.0.blocks.0.attn.qkv.bias", (24,))
    assert not decays("stages.0.blocks.0.norm1.weight", (8,))
    assert not decays("stages.0.blocks.0.attn.rel_pos.table", (25, 2))
    bias = _param("x.bias", (2,), 1.0)
    opt = AdamW([("x.bias", bias)], lr=0.1, weight_decay=0.5)
    bias.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(bias.data, 1.0)


def test_missing_grad_treated_as_zero_and_state_reload(rng):
    w = _param("w", (2, 2), 1.0)
    opt = AdamW([("w", w)], lr=0.1, weight_decay=0.0)
    opt.step()
    np.testing.assert_array_equal(w.data, 1.0)
    w.grad = rng.normal(size=(2, 2))
    opt.step()
    w2 = _param("w", (2, 2), 1.0)
    opt2 = AdamW([("w", w2)])
    opt2.load_state({"m": {"w": opt.state["m"]["w"]}, "v": {"w": opt.state["v"]["w"]}, "t": 2})
    assert opt2.state["t"] == 2 and np.array_equal(opt2.state["m"]["w"], opt.state["m"]["w"])
    assert math.isclose(opt2.lr, 1e-3)
