import numpy as np
import pytest

from conftest import check_grads
from vsa_lab import autodiff as ad
from vsa_lab.attention import WindowAttention
from vsa_lab.blocks import ABLATION_ROWS, BASELINE, VSA_DEFAULT, Toggles, TransformerBlock, vsa_block
from vsa_lab.errors import ConfigError
from vsa_lab.vsa import (CPE, VSR, VSAttention, cpe, effective_transform, target_window_coords,
                         vsa_attention, vsr_predict)
from vsa_lab.windowing import WindowGrid


def test_vsr_zero_init_gives_zero_raw(rng):
    vsr = VSR(6, 3).initialize(0)
    raw = vsr_predict(ad.Tensor(rng.normal(size=(7, 8, 6))), WindowGrid(7, 8, 3), vsr)
    assert raw.shape == (1, 9, 3, 4)
    assert not raw.data.any()


def test_vsr_constant_input_same_transform_everywhere(rng):
    vsr = VSR(4, 2).initialize(0)
    vsr.weight.data[...] = rng.normal(size=(4, 8))
    vsr.bias.data[...] = rng.normal(size=8)
    raw = vsr_predict(ad.Tensor(np.full((7, 7, 4), -0.3)), WindowGrid(7, 7, 3), vsr).data[0]
    np.testing.assert_allclose(raw, np.broadcast_to(raw[:1], raw.shape), atol=1e-15)


def test_vsr_hand_case():
    vsr = VSR(1, 1).initialize(0)
    vsr.weight.data[...] = [[0.5, 0.5, 0.5, 0.5]]
    raw = vsr_predict(ad.Tensor(np.full((3, 3, 1), 2.0)), WindowGrid(3, 3, 3), vsr).data
    np.testing.assert_array_equal(raw.reshape(4), [1.0, 1.0, 1.0, 1.0])


def test_vsr_channel_mismatch():
    with pytest.raises(ConfigError):
        vsr_predict(ad.Tensor(np.ones((3, 3, 5))), WindowGrid(3, 3, 3), VSR(4, 2).initialize(0))


def test_identity_coords_are_default_tokens():
    grid = WindowGrid(8, 10, 3)
    coords = target_window_coords(np.zeros((grid.n_windows, 2, 4)), grid).data[0]
    assert coords.shape == (grid.n_windows, 2, 9, 2)
    for h in range(2):
        np.testing.assert_array_equal(coords[:, h], grid.token_coords())


def test_coords_hand_case():
    grid = WindowGrid(7, 7, 7)
    raw = np.array([[[1.0, 1.0, 1.0, 0.0]]])  # s = (2, 2), o = (1, 0)
    coords = target_window_coords(raw, grid).data[0, 0, 0]
    np.testing.assert_array_equal(coords[0], [-2.0, -3.0])


def test_coords_pure_translation():
    grid = WindowGrid(9, 9, 3)
    raw = np.zeros((grid.n_windows, 1, 4))
    raw[..., 2] = 5.0
    coords = target_window_coords(raw, grid).data[0, :, 0]
    np.testing.assert_array_equal(coords - grid.token_coords(), np.broadcast_to([5.0, 0.0], coords.shape))


def test_window_ratio_mode():
    grid = WindowGrid(12, 6, 3)
    zero = target_window_coords(np.zeros((grid.n_windows, 1, 4)), grid, "window_ratio").data[0, :, 0]
    np.testing.assert_array_equal(zero, grid.token_coords())
    raw = np.zeros((1, grid.n_windows, 1, 4))
    raw[..., :] = [2.0, 2.0, 2.0, 4.0]
    tf = effective_transform(raw, grid, "window_ratio")
    np.testing.assert_allclose(tf.scale[0, 0, 0], [1 + 2 * 3 / 6, 1 + 2 * 3 / 12])
    np.testing.assert_allclose(tf.offset[0, 0, 0], [2 * 3 / 6, 4 * 3 / 12])
    with pytest.raises(ConfigError):
        target_window_coords(raw, grid, "pixels")


def test_coords_grad(rng):
    grid = WindowGrid(6, 5, 3)
    probe = rng.normal(size=(2, grid.n_windows, 2, 9, 2))
    for mode in ("token_units", "window_ratio"):
        check_grads(lambda r: ad.sum(ad.mul(target_window_coords(r, grid, mode), ad.Tensor(probe))),
                    rng.normal(size=(2, grid.n_windows, 2, 4)))


def test_rects_follow_transform():
    grid = WindowGrid(6, 6, 3)
    raw = np.zeros((1, 4, 2, 4))
    tf = effective_transform(raw, grid)
    np.testing.assert_array_equal(tf.target_rects()[0, :, 0], tf.default_rects())
    np.testing.assert_array_equal(tf.default_rects()[0], [-0.5, -0.5, 2.5, 2.5])
    raw[0, 1, 1] = [1.0, 0.0, 5.0, 0.0]
    tr = effective_transform(raw, grid).target_rects()[0, 1, 1]
    # centre (4, 1) moved to (9, 1); x half-extent 1.5 doubled
    np.testing.assert_allclose(tr, [6.0, -0.5, 12.0, 2.5])


def test_overlapping_targets_share_sources():
    grid = WindowGrid(4, 8, 4)
    raw = np.zeros((grid.n_windows, 1, 4))
    raw[0, 0, 2] = grid.w / 2
    coords = target_window_coords(raw, grid).data[0, :, 0]
    assert coords.shape[1] == grid.w ** 2
    a = {tuple(p) for p in coords[0]}
    b = {tuple(p) for p in coords[1]}
    assert len(a & b) == 8
    assert not {tuple(p) for p in grid.token_coords()[0]} & b


def _attn(dim=8, heads=2, w=3, seed=0):
    return VSAttention(dim, heads, w).initialize(seed)


def test_identity_matches_baseline_attention(rng):
    attn = _attn()
    base = WindowAttention(8, 2, 3, rel_pos=False)
    base.qkv, base.proj = attn.qkv, attn.proj
    x = ad.Tensor(rng.normal(size=(2, 7, 5, 8)))
    diff = attn(x).data - base(x).data
    assert np.max(np.abs(diff)) < 1e-10


def test_single_window_is_full_attention(rng):
    attn = _attn(w=5)
    x = rng.normal(size=(5, 5, 8))
    qkv = x @ attn.qkv.weight.data + attn.qkv.bias.data
    q, k, v = (qkv[..., i * 8:(i + 1) * 8].reshape(25, 2, 4) for i in range(3))
    out = np.zeros((25, 2, 4))
    for h in range(2):
        logit = q[:, h] @ k[:, h].T / 2.0
        p = np.exp(logit - logit.max(1, keepdims=True))
        out[:, h] = (p / p.sum(1, keepdims=True)) @ v[:, h]
    ref = out.reshape(5, 5, 8) @ attn.proj.weight.data + attn.proj.bias.data
    np.testing.assert_allclose(vsa_attention(x, attn).data, ref, atol=1e-12)


def test_target_outside_map_gives_zero_before_projection(rng):
    attn = _attn()
    attn.proj.bias.data[...] = rng.normal(size=8)
    x = ad.Tensor(rng.normal(size=(1, 6, 6, 8)))
    raw = np.zeros((1, 4, 2, 4))
    raw[..., 2] = 100.0
    out = attn(x, raw_override=raw).data
    np.testing.assert_allclose(out, np.broadcast_to(attn.proj.bias.data, out.shape), atol=1e-15)


def test_heads_sample_independently(rng):
    attn = _attn()
    grid = WindowGrid(6, 6, 3)
    kv = ad.Tensor(rng.normal(size=(1, 6, 6, 16)))
    raw = rng.normal(size=(1, 4, 2, 4)) * 0.3
    k0, v0 = attn.sample_kv(kv, target_window_coords(raw, grid))
    raw2 = raw.copy()
    raw2[:, :, 1] += 0.7
    k1, v1 = attn.sample_kv(kv, target_window_coords(raw2, grid))
    assert np.array_equal(k0.data[:, :, 0], k1.data[:, :, 0]) and np.array_equal(v0.data[:, :, 0], v1.data[:, :, 0])
    assert not np.allclose(k0.data[:, :, 1], k1.data[:, :, 1])


def test_trace_records_identity_at_init(rng):
    trace = []
    _attn()(ad.Tensor(rng.normal(size=(1, 6, 6, 8))), trace=trace)
    (tf,) = trace
    np.testing.assert_array_equal(tf.scale, 1.0)
    np.testing.assert_array_equal(tf.offset, 0.0)


def test_cpe_cases(rng):
    z = rng.normal(size=(5, 9, 4))
    p = CPE(4, 3).initialize(0)
    p.kernel.data[...] = 0.0
    np.testing.assert_array_equal(cpe(z, p).data, z)
    p.kernel.data[1, 1] = 1.0
    np.testing.assert_array_equal(cpe(z, p).data, 2 * z)
    assert CPE(4, 7).initialize(0)(ad.Tensor(rng.normal(size=(3, 11, 4)))).shape == (3, 11, 4)
    with pytest.raises(ConfigError):
        CPE(4, 4)


def test_toggles_parse():
    assert Toggles.parse("cpe,vsr") == VSA_DEFAULT
    assert Toggles.parse(" shift ") == Toggles(False, False, True)
    assert Toggles.parse("none") == Toggles(False, False, False)
    assert str(BASELINE) == "shift"
    with pytest.raises(ConfigError):
        Toggles.parse("cpe,rope")


@pytest.mark.parametrize("tog", ABLATION_ROWS, ids=str)
def test_all_ablation_rows_run(tog, rng):
    blk = TransformerBlock(8, 2, 3, 2.0, tog, shift_size=1 if tog.shift else 0).initialize(1)
    if blk.is_vsa:
        blk.attn.vsr.weight.data[...] = rng.normal(size=blk.attn.vsr.weight.shape) * 0.1
    out = vsa_block(rng.normal(size=(7, 6, 8)), blk)
    loss = ad.sum(ad.mul(out, out))
    ad.backward(loss)
    assert np.isfinite(loss.data)
    assert all(p.grad is not None and np.all(np.isfinite(p.grad)) for p in blk.parameters())
    assert (blk.cpe is not None) == tog.cpe
    assert (blk.attn.rel_pos is None) == tog.vsr


def test_vsa_block_trace_carries_layer_id(rng):
    blk = TransformerBlock(8, 2, 3, 2.0, VSA_DEFAULT, layer_id=5).initialize(0)
    trace = []
    vsa_block(rng.normal(size=(6, 6, 8)), blk, trace)
    assert [lid for lid, _ in trace] == [5]
