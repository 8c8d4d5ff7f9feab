import math

import numpy as np
import pytest

from biaxial import lstm_core, model as M
from biaxial.gradcheck import TOLERANCE, check_model, random_batch
from biaxial.input_kernel import KernelConfig, expand
from biaxial.model import (
    ModelConfig,
    init_model_params,
    loss,
    loss_backward,
    note_axis_forward_train,
    time_axis_forward,
)
from biaxial.note_state import NoteStateBatch

from conftest import small_config

LN2 = math.log(2.0)


def make_setup(seed=0, n_batch=2, n_steps=6, cfg=None, dtype=np.float32):
    cfg = cfg or small_config()
    rng = np.random.default_rng(seed)
    params = init_model_params(cfg, rng, dtype)
    params.out_W[...] = rng.standard_normal(params.out_W.shape).astype(dtype)
    params.out_b[...] = rng.standard_normal(params.out_b.shape).astype(dtype)
    batch = random_batch(rng, n_batch, cfg.n_notes, n_steps, low_note=cfg.low_note)
    features = expand(batch, cfg.kernel, dtype=dtype)
    return cfg, params, batch, features


def zero_all_lstm(params):
    for layer in params.time_layers + params.note_layers:
        layer.W[...] = 0
        layer.U[...] = 0
        layer.b[...] = 0


def test_time_axis_zero_params_zero_output():
    cfg, params, batch, features = make_setup()
    zero_all_lstm(params)
    out, _ = time_axis_forward(features, params)
    assert not out.any()


def test_time_axis_note_permutation_equivariance_exact():
    cfg, params, batch, features = make_setup()
    rng = np.random.default_rng(99)
    out, _ = time_axis_forward(features, params)
    for _ in range(5):
        perm = rng.permutation(cfg.n_notes)
        permuted_out, _ = time_axis_forward(features[:, perm], params)
        assert np.array_equal(permuted_out, out[:, perm])


def test_time_axis_permutation_equivariance_with_masks():
    cfg, params, batch, features = make_setup()
    n_batch = features.shape[0]
    masks = lstm_core.make_dropout_masks(
        np.random.default_rng(0), n_batch * cfg.n_notes, list(cfg.time_layer_sizes), 0.75,
        np.float32,
    )
    perm = np.random.default_rng(1).permutation(cfg.n_notes)
    permuted_masks = [
        m.reshape(n_batch, cfg.n_notes, -1)[:, perm].reshape(m.shape) for m in masks
    ]
    out, _ = time_axis_forward(features, params, masks)
    permuted_out, _ = time_axis_forward(features[:, perm], params, permuted_masks)
    assert np.array_equal(permuted_out, out[:, perm])


def test_time_axis_single_note_reduces_to_stack_forward():
    cfg, params, batch, features = make_setup()
    single = np.ascontiguousarray(features[:, :1])
    out, _ = time_axis_forward(single, params)
    xs = np.ascontiguousarray(single.transpose(2, 0, 1, 3)).reshape(
        single.shape[2], single.shape[0], -1
    )
    ys, _, _ = lstm_core.stack_forward(xs, params.time_layers)
    assert np.array_equal(out[:, 0], ys.transpose(1, 0, 2))


def test_note_axis_zero_params_gives_half_probabilities():
    cfg, params, batch, features = make_setup()
    zero_all_lstm(params)
    params.out_W[...] = 0
    params.out_b[...] = 0
    t_out, _ = time_axis_forward(features, params)
    logits, _ = note_axis_forward_train(t_out, batch, params)
    assert not logits.any()
    assert np.all(lstm_core.sigmoid(logits) == 0.5)


def test_note_axis_causality_upward_only():
    cfg, params, batch, features = make_setup(n_steps=5)
    t_out, _ = time_axis_forward(features, params)
    base, _ = note_axis_forward_train(t_out, batch, params)
    rng = np.random.default_rng(13)
    for _ in range(10):
        n = int(rng.integers(0, cfg.n_notes))
        s = int(rng.integers(1, batch.n_steps))
        flipped = batch.cells.copy()
        flipped[0, n, s, 0] ^= 1
        flipped[0, n, s, 1] = flipped[0, n, s, 0] * flipped[0, n, s, 1]
        changed, _ = note_axis_forward_train(
            t_out, NoteStateBatch(batch.low_note, flipped), params
        )
        # notes at or below the flipped one never move, at any step
        assert np.array_equal(changed[:, : n + 1], base[:, : n + 1])
        # other target steps never move either (sequences are per-step)
        other = [t for t in range(batch.n_steps - 1) if t != s - 1]
        assert np.array_equal(changed[:, :, other], base[:, :, other])


def test_note_axis_single_note_ignores_labels():
    cfg = small_config(n_notes=1)
    rng = np.random.default_rng(3)
    params = init_model_params(cfg, rng)
    params.out_W[...] = rng.standard_normal(params.out_W.shape).astype(np.float32)
    batch = random_batch(rng, 2, 1, 6, low_note=cfg.low_note)
    features = expand(batch, cfg.kernel)
    t_out, _ = time_axis_forward(features, params)
    logits_a, _ = note_axis_forward_train(t_out, batch, params)
    other = random_batch(np.random.default_rng(4), 2, 1, 6, low_note=cfg.low_note)
    logits_b, _ = note_axis_forward_train(t_out, other, params)
    assert np.array_equal(logits_a, logits_b)


def cells_single(play, artic, n_steps=2):
    cells = np.zeros((1, 1, n_steps, 2), np.uint8)
    cells[0, 0, 1] = (play, artic)
    return NoteStateBatch(low_note=60, cells=cells)


def test_loss_zero_logit_play_label_one():
    batch = cells_single(1, 0)
    logits = np.zeros((1, 1, 1, 2), np.float64)
    loss_val, per_step = loss(logits, batch)
    # play CE = ln 2, articulation CE = ln 2 (played, label 0)
    assert abs(loss_val - LN2) < 1e-12
    assert abs(per_step + 2 * LN2) < 1e-12


def test_loss_articulation_masked_when_unplayed():
    batch = cells_single(0, 0)
    quiet = np.zeros((1, 1, 1, 2), np.float64)
    loud = quiet.copy()
    loud[..., 1] = 1000.0  # arbitrary articulation logit
    assert loss(loud, batch) == loss(quiet, batch)


def test_loss_softplus_value():
    batch = cells_single(1, 0)
    logits = np.zeros((1, 1, 1, 2), np.float64)
    logits[..., 0] = 2.0
    loss_val, _ = loss(logits, batch)
    expected = (0.1269280110429726 + LN2) / 2  # ln(1+e^-2) for play, ln 2 for artic
    assert abs(loss_val - expected) < 1e-12


def test_loss_finite_for_extreme_logits():
    batch = cells_single(1, 1)
    logits = np.full((1, 1, 1, 2), 1e6)
    assert np.isfinite(loss(logits, batch)[0])
    assert np.isfinite(loss(-logits, batch)[0])


def test_zero_logit_play_channel_baseline():
    # for any labels, zero logits give play-channel per-step ll of -N ln 2
    rng = np.random.default_rng(21)
    batch = random_batch(rng, 3, 88, 9, low_note=21)
    logits = np.zeros((3, 88, 8, 2), np.float32)
    play, artic = M.per_window_channel_ll(logits, batch)
    assert np.allclose(play, -88 * LN2, atol=1e-4)
    played_noted = batch.cells[:, :, 1:, 0].sum(axis=(1, 2)) / 8
    assert np.allclose(artic, -played_noted * LN2, atol=1e-4)


def test_loss_backward_masked_cells_have_zero_gradient():
    cfg, params, batch, features = make_setup(n_steps=5)
    t_out, _ = time_axis_forward(features, params)
    logits, _ = note_axis_forward_train(t_out, batch, params)
    d = loss_backward(logits, batch)
    unplayed = batch.cells[:, :, 1:, 0] == 0
    assert not d[..., 1][unplayed].any()


def test_all_rest_labels_zero_articulation_weight_gradient():
    cfg = small_config()
    rng = np.random.default_rng(2)
    params = init_model_params(cfg, rng)  # fresh: zero output layer
    cells = np.zeros((2, cfg.n_notes, 6, 2), np.uint8)
    batch = NoteStateBatch(low_note=cfg.low_note, cells=cells)
    features = expand(batch, cfg.kernel)
    t_out, t_cache = time_axis_forward(features, params)
    logits, n_cache = note_axis_forward_train(t_out, batch, params)
    grads = M.backward(loss_backward(logits, batch), t_cache, n_cache, params)
    assert not grads["out.W"][1].any()
    assert grads["out.b"][1] == 0.0


def test_end_to_end_gradients_match_finite_differences():
    reports = check_model(seed=1, n_notes=6, n_steps=5, batch=2)
    assert all(r.max_rel_err < TOLERANCE for r in reports)


def test_duplicated_batch_leaves_mean_gradient_unchanged():
    cfg = small_config()
    rng = np.random.default_rng(31)
    params = init_model_params(cfg, rng, np.float64)
    params.out_W[...] = rng.standard_normal(params.out_W.shape)
    single = random_batch(rng, 1, cfg.n_notes, 5, low_note=cfg.low_note)
    double = NoteStateBatch(single.low_note, np.repeat(single.cells, 2, axis=0))

    def grads_of(batch):
        features = expand(batch, cfg.kernel, dtype=np.float64)
        t_out, t_cache = time_axis_forward(features, params)
        logits, n_cache = note_axis_forward_train(t_out, batch, params)
        return M.backward(loss_backward(logits, batch), t_cache, n_cache, params)

    g1 = grads_of(single)
    g2 = grads_of(double)
    for name in g1:
        assert np.allclose(g1[name], g2[name], rtol=1e-12, atol=1e-13)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(time_layer_sizes=())
    with pytest.raises(ValueError):
        ModelConfig(note_layer_sizes=(0,))
    with pytest.raises(ValueError):
        ModelConfig(keep_prob=0.0)


def test_model_config_round_trip():
    cfg = small_config(keep_prob=0.9)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_note_input_size():
    cfg = ModelConfig(time_layer_sizes=(64, 48), note_layer_sizes=(32,))
    assert cfg.note_input_size == 50


def test_blocks_cover_all_parameters():
    cfg = small_config(time_layer_sizes=(5, 4), note_layer_sizes=(3,))
    params = init_model_params(cfg, np.random.default_rng(0))
    names = [name for name, _ in params.blocks()]
    assert names == [
        "time.0.W", "time.0.U", "time.0.b",
        "time.1.W", "time.1.U", "time.1.b",
        "note.0.W", "note.0.U", "note.0.b",
        "out.W", "out.b",
    ]
