import math

import numpy as np
import pytest

from forambench import autograd as ag
from forambench.autograd import Tape, Tensor
from forambench.errors import ConfigError, ContractError, DimensionError
from forambench.optim import Adam
from forambench.swin_sr import (SRTrainer, SwinSR, SwinSRConfig, SwinLayer,
                                WindowAttention, build_shift_mask, lr_at_step,
                                sr_train_step, window_partition, window_reverse)

from gradcheck import numerical_grad, rel_error


def _tiny_cfg(scale=2, embed=8, rstbs=1):
    return SwinSRConfig(scale=scale, embed_dim=embed, window_size=4,
                        rstb_count=rstbs, layers_per_rstb=2, heads=2, mlp_ratio=2)


# ------------------------------------------------------------- windows

def test_window_partition_counts(rng):
    x = ag.tensor(rng.standard_normal((1, 8, 8, 3)))
    out = window_partition(x, 4)
    assert out.shape == (4, 16, 3)


def test_window_partition_rejects_indivisible(rng):
    with pytest.raises(DimensionError):
        window_partition(ag.tensor(rng.standard_normal((1, 6, 8, 2))), 4)


def test_window_roundtrip_bit_exact(rng):
    for n, h, w_ext, c in [(1, 8, 8, 2), (2, 12, 8, 5), (3, 4, 4, 1)]:
        x = rng.standard_normal((n, h, w_ext, c))
        back = window_reverse(window_partition(ag.tensor(x), 4), 4, h, w_ext)
        assert np.array_equal(back.data, x)


def test_single_window_is_flattened_input(rng):
    x = rng.standard_normal((1, 4, 4, 3))
    out = window_partition(ag.tensor(x), 4)
    np.testing.assert_array_equal(out.data[0], x[0].reshape(16, 3))


def test_window_partition_index_map_oracle(rng):
    n, h, w_ext, c, w = 2, 8, 12, 3, 4
    x = rng.standard_normal((n, h, w_ext, c))
    out = window_partition(ag.tensor(x), w).data
    per_row = w_ext // w
    per_image = (h // w) * per_row
    for b in range(out.shape[0]):
        img, win = divmod(b, per_image)
        win_r, win_c = divmod(win, per_row)
        for t in range(w * w):
            dr, dc = divmod(t, w)
            expected = x[img, win_r * w + dr, win_c * w + dc]
            np.testing.assert_array_equal(out[b, t], expected)


def test_window_reverse_detects_permutation(rng):
    x = rng.standard_normal((1, 8, 8, 2))
    tokens = window_partition(ag.tensor(x), 4).data.copy()
    tokens[[0, 3]] = tokens[[3, 0]]
    back = window_reverse(ag.tensor(tokens), 4, 8, 8)
    assert not np.array_equal(back.data, x)


def test_window_reverse_rejects_inconsistent_counts(rng):
    tokens = ag.tensor(rng.standard_normal((3, 16, 2)))
    with pytest.raises(DimensionError):
        window_reverse(tokens, 4, 8, 8)


def test_window_ops_carry_gradient(rng):
    x = ag.parameter(rng.standard_normal((1, 8, 8, 2)))
    w = rng.standard_normal((1, 8, 8, 2))
    with Tape() as tape:
        y = window_reverse(window_partition(x, 4), 4, 8, 8)
        tape.backward(ag.sum_(y * w))
    np.testing.assert_allclose(x.grad, w, atol=1e-12)


# ---------------------------------------------------------------- mask

def _provenance_ids(h, w_ext, w, shift):
    """Brute-force pre-shift window id for every post-shift position."""
    ids = np.empty((h, w_ext), dtype=np.int64)
    for r in range(h):
        for c in range(w_ext):
            orig_r = (r + shift) % h
            orig_c = (c + shift) % w_ext
            ids[r, c] = (orig_r // w) * (w_ext // w) + orig_c // w
    return ids


def test_mask_zero_shift_is_all_zero():
    mask = build_shift_mask(8, 8, 4, 0)
    assert mask.shape == (4, 16, 16)
    assert np.all(mask == 0.0)


def test_mask_matches_provenance_oracle():
    h = w_ext = 8
    w, shift = 4, 2
    mask = build_shift_mask(h, w_ext, w, shift)
    ids = _provenance_ids(h, w_ext, w, shift)
    per_row = w_ext // w
    masked_pairs = 0
    for b in range(mask.shape[0]):
        win_r, win_c = divmod(b, per_row)
        for i in range(w * w):
            for j in range(w * w):
                ri, ci = win_r * w + i // w, win_c * w + i % w
                rj, cj = win_r * w + j // w, win_c * w + j % w
                same = ids[ri, ci] == ids[rj, cj]
                assert mask[b, i, j] == (0.0 if same else -1e9)
                masked_pairs += 0 if same else 1
    assert masked_pairs > 0


def test_mask_randomized_geometries(rng):
    for h, w_ext, w, shift in [(8, 12, 4, 2), (12, 12, 4, 1), (16, 8, 4, 3)]:
        mask = build_shift_mask(h, w_ext, w, shift)
        ids = _provenance_ids(h, w_ext, w, shift)
        tiles = ids.reshape(h // w, w, w_ext // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
        expect = np.where(tiles[:, :, None] == tiles[:, None, :], 0.0, -1e9)
        np.testing.assert_array_equal(mask, expect)


def test_mask_rejects_bad_shift():
    with pytest.raises(ContractError):
        build_shift_mask(8, 8, 4, 4)


def test_masked_logits_vanish_through_softmax(rng):
    mask = build_shift_mask(8, 8, 4, 2)
    logits = rng.standard_normal((4, 16, 16))
    weights = ag.softmax(ag.tensor(logits + mask)).data
    assert np.all(weights[mask < 0] < 1e-300)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)


# --------------------------------------------------------------- layers

def test_attention_rows_sum_to_one(rng):
    cfg = _tiny_cfg()
    attn = WindowAttention(cfg, rng)
    tokens = ag.tensor(rng.standard_normal((4, 16, cfg.embed_dim)))
    mask = build_shift_mask(8, 8, 4, 2)
    _, weights = attn.forward_with_weights(tokens, mask)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_leak_below_threshold(rng):
    cfg = _tiny_cfg()
    attn = WindowAttention(cfg, rng)
    tokens = ag.tensor(rng.standard_normal((4, 16, cfg.embed_dim)))
    mask = build_shift_mask(8, 8, 4, 2)
    _, weights = attn.forward_with_weights(tokens, mask)
    leak = weights * (mask[:, None] < 0)
    assert leak.sum() < 1e-12


def test_relative_bias_equal_offsets_share_values(rng):
    cfg = _tiny_cfg()
    attn = WindowAttention(cfg, rng)
    bias = attn.bias().data   # (heads, w*w, w*w)
    w = cfg.window_size
    seen: dict[tuple[int, int], np.ndarray] = {}
    for i in range(w * w):
        for j in range(w * w):
            off = (i // w - j // w, i % w - j % w)
            if off in seen:
                np.testing.assert_array_equal(bias[:, i, j], seen[off])
            else:
                seen[off] = bias[:, i, j]
    assert len(seen) == (2 * w - 1) ** 2


def test_swin_layer_preserves_shape(rng):
    cfg = _tiny_cfg()
    for shift in (0, 2):
        layer = SwinLayer(cfg, shift, rng)
        x = ag.tensor(rng.standard_normal((2, 8, 8, cfg.embed_dim)))
        assert layer(x).shape == x.shape


def test_swin_layer_zero_projections_is_identity(rng):
    cfg = _tiny_cfg()
    layer = SwinLayer(cfg, 2, rng)
    layer.attn.proj.weight.data[:] = 0.0
    layer.attn.proj.bias.data[:] = 0.0
    layer.mlp.fc2.weight.data[:] = 0.0
    layer.mlp.fc2.bias.data[:] = 0.0
    x = rng.standard_normal((1, 8, 8, cfg.embed_dim))
    assert np.array_equal(layer(ag.tensor(x)).data, x)


# ---------------------------------------------------------------- model

def test_config_validation():
    with pytest.raises(ConfigError):
        SwinSRConfig(scale=3)
    with pytest.raises(ConfigError):
        SwinSRConfig(scale=2, embed_dim=9, heads=2)
    with pytest.raises(ConfigError):
        SwinSRConfig(scale=2, window_size=3)
    with pytest.raises(ConfigError):
        SwinSRConfig(scale=2, channels=4)


@pytest.mark.parametrize("scale,out_side", [(2, 32), (4, 64), (8, 128)])
def test_sr_forward_shape_law(rng, scale, out_side):
    model = SwinSR(_tiny_cfg(scale=scale), rng)
    out = model(ag.tensor(rng.random((1, 1, 16, 16))))
    assert out.shape == (1, 1, out_side, out_side)


def test_sr_forward_pads_and_crops(rng):
    model = SwinSR(_tiny_cfg(scale=2), rng)
    out = model(ag.tensor(rng.random((1, 1, 10, 7))))
    assert out.shape == (1, 1, 20, 14)


def test_sr_forward_clamps_to_unit_range(rng):
    model = SwinSR(_tiny_cfg(scale=2), rng)
    out = model(ag.tensor(rng.random((1, 1, 8, 8)) * 10.0))
    assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)


def test_sr_zero_head_zero_batch_loss(rng):
    model = SwinSR(_tiny_cfg(scale=2), rng)
    model.conv_out.weight.data[:] = 0.0
    model.conv_out.bias.data[:] = 0.0
    opt = Adam(model.params(), lr=0.0)
    loss = sr_train_step(model, opt, Tensor(np.zeros((1, 1, 8, 8))),
                         Tensor(np.zeros((1, 1, 16, 16))))
    assert loss == 0.0


def test_sr_train_step_rejects_mismatched_pair(rng):
    model = SwinSR(_tiny_cfg(scale=2), rng)
    opt = Adam(model.params(), lr=1e-4)
    with pytest.raises(DimensionError):
        sr_train_step(model, opt, Tensor(np.zeros((1, 1, 8, 8))),
                      Tensor(np.zeros((1, 1, 17, 16))))


def test_repeated_batch_loss_trend(rng):
    model = SwinSR(_tiny_cfg(scale=2), rng)
    opt = Adam(model.params(), lr=2e-4, beta1=0.9, beta2=0.99)
    lr_batch = Tensor(rng.random((2, 1, 8, 8)))
    hr_batch = Tensor(rng.random((2, 1, 16, 16)))
    losses = [sr_train_step(model, opt, lr_batch, hr_batch) for _ in range(50)]
    for prev, cur in zip(losses[5:], losses[6:]):
        assert cur <= prev + 1e-9
    assert losses[-1] < losses[0]


def test_lr_schedule_halves_at_budget_slices():
    assert lr_at_step(0, 5000) == 2e-4
    assert lr_at_step(1999, 5000) == 2e-4
    assert lr_at_step(2000, 5000) == 1e-4
    assert lr_at_step(4000, 5000) == 5e-5
    assert lr_at_step(9, 10) == 5e-5


def test_training_is_deterministic(rng, tmp_path):
    lr_images = rng.random((4, 1, 8, 8))
    hr_images = rng.random((4, 1, 16, 16))

    def run(path):
        model = SwinSR(_tiny_cfg(scale=2), np.random.default_rng(11))
        trainer = SRTrainer(model, total_steps=10, seed=5, batch_size=2)
        trainer.run(lr_images, hr_images, log_every=5)
        model.save(path)

    run(tmp_path / "a.fvgc")
    run(tmp_path / "b.fvgc")
    assert (tmp_path / "a.fvgc").read_bytes() == (tmp_path / "b.fvgc").read_bytes()


def test_checkpoint_roundtrip_same_outputs(rng, tmp_path):
    model = SwinSR(_tiny_cfg(scale=2), rng)
    path = tmp_path / "m.fvgc"
    model.save(path)
    back = SwinSR.load(path)
    x = ag.tensor(rng.random((1, 1, 8, 8)))
    assert np.array_equal(model(x).data, back(x).data)


def test_end_to_end_finite_differences(rng):
    cfg = _tiny_cfg(scale=2, embed=8, rstbs=1)
    model = SwinSR(cfg, rng)
    x = rng.random((1, 1, 8, 8))
    target = rng.random((1, 1, 16, 16))
    params = model.params()
    with Tape() as tape:
        loss = ag.mean(ag.abs_(model(Tensor(x), clamp=False) - Tensor(target)))
        tape.backward(loss)
    grads = [p.grad.copy() for p in params]

    def loss_value():
        out = model(Tensor(x), clamp=False)
        return float(np.mean(np.abs(out.data - target)))

    worst = 0.0
    for p, g in zip(params, grads):
        num = numerical_grad(lambda _: loss_value(), p.data, eps=1e-5)
        worst = max(worst, rel_error(g, num))
    assert worst < 1e-3, f"worst end-to-end rel err {worst:.2e}"
