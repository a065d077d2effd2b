"""Classification head: loss, gradients, optimizer, training loop."""

import numpy as np
import pytest

import oracles
from signet.bundle import load_bundle
from signet.errors import ConfigError, DataError, FormatError, NumericError
from signet.head import (
    AdamState,
    HeadGrads,
    HeadParams,
    TrainConfig,
    adam_step,
    cross_entropy,
    head_backward,
    head_logits,
    init_head,
    load_checkpoint,
    loss_grad_logits,
    one_hot,
    predict,
    save_checkpoint,
    train_head,
)
from signet.nnops import softmax
from signet.rng import derive_rng


def random_head_case(rng, batch=None, d=None, h=None, c=None):
    batch = batch or int(rng.integers(1, 7))
    d = d or int(rng.integers(1, 9))
    h = h or int(rng.integers(1, 7))
    c = c or int(rng.integers(2, 6))
    x = rng.normal(0, 1, (batch, d)).astype(np.float32)
    y = rng.integers(0, c, batch)
    params = HeadParams(
        w1=rng.normal(0, 0.5, (d, h)).astype(np.float32),
        b1=rng.normal(0, 0.1, h).astype(np.float32),
        w2=rng.normal(0, 0.5, (h, c)).astype(np.float32),
        b2=rng.normal(0, 0.1, c).astype(np.float32),
    )
    return x, y, c, params


def test_cross_entropy_uniform_36_classes():
    # A uniform distribution over 36 gestures scores ln(36).
    probs = np.full((4, 36), 1.0 / 36.0, dtype=np.float32)
    onehot = one_hot(np.array([0, 7, 18, 35]), 36)
    assert cross_entropy(probs, onehot) == pytest.approx(np.log(36.0), rel=1e-6)


def test_cross_entropy_hand_example():
    probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]], dtype=np.float32)
    onehot = one_hot(np.array([0, 2]), 3)
    want = (-np.log(0.7) - np.log(0.1)) / 2.0
    assert cross_entropy(probs, onehot) == pytest.approx(want, rel=1e-6)


def test_cross_entropy_floors_zero_probability():
    probs = np.array([[1.0, 0.0]], dtype=np.float32)
    onehot = one_hot(np.array([1]), 2)
    loss = cross_entropy(probs, onehot)
    assert np.isfinite(loss)
    assert loss == pytest.approx(-np.log(1e-12), rel=1e-6)


def test_cross_entropy_matches_float64_oracle():
    rng = derive_rng(200, "ce")
    for _ in range(50):
        b, c = int(rng.integers(1, 9)), int(rng.integers(2, 8))
        probs = softmax(rng.normal(0, 2, (b, c)).astype(np.float32))
        labels = rng.integers(0, c, b)
        got = cross_entropy(probs, one_hot(labels, c))
        assert got == pytest.approx(oracles.cross_entropy_64(probs, labels), rel=1e-6)


def test_logit_gradient_is_softmax_minus_onehot_over_batch():
    rng = derive_rng(201, "lg")
    logits = rng.normal(0, 2, (5, 4)).astype(np.float32)
    onehot = one_hot(rng.integers(0, 4, 5), 4)
    got = loss_grad_logits(logits, onehot)
    want = (softmax(logits) - onehot) / 5.0
    np.testing.assert_allclose(got, want, rtol=1e-6)


def test_logit_gradient_matches_finite_differences():
    rng = derive_rng(202, "lg-fd")
    logits = rng.normal(0, 1.5, (3, 4)).astype(np.float32)
    labels = rng.integers(0, 4, 3)
    onehot = one_hot(labels, 4)

    def loss_of(arrays):
        lg = arrays[0]
        e = np.exp(lg - lg.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        return oracles.cross_entropy_64(probs, labels)

    (fd,) = oracles.finite_diff_grads(loss_of, [logits])
    np.testing.assert_allclose(loss_grad_logits(logits, onehot), fd, atol=1e-6)


def test_head_backward_matches_finite_differences():
    rng = derive_rng(203, "bw-fd")
    for _ in range(30):
        x, y, c, params = random_head_case(rng)
        grads = head_backward(x, one_hot(y, c), params)
        fd = oracles.finite_diff_grads(
            lambda arrs: oracles.head_loss_64(x, y, c, arrs),
            list(params.astuple()),
        )
        for got, want in zip(grads.astuple(), fd):
            np.testing.assert_allclose(got, want, rtol=1e-3, atol=1e-6)


def test_adam_zero_gradient_changes_nothing():
    params = init_head(3, seed=0, feature_dim=4, hidden_dim=5)
    zeros = HeadParams(*(np.zeros_like(a) for a in params.astuple()))
    state = AdamState.zeros_like(params)
    updated, new_state = adam_step(params, zeros, state, TrainConfig())
    for before, after in zip(params.astuple(), updated.astuple()):
        np.testing.assert_array_equal(before, after)
    assert new_state.step_count == 1


def test_adam_first_step_with_unit_gradient():
    # With g = 1 everywhere, bias correction makes the very first update
    # exactly lr / (1 + eps) regardless of beta values.
    params = init_head(2, seed=1, feature_dim=3, hidden_dim=2)
    ones = HeadParams(*(np.ones_like(a) for a in params.astuple()))
    cfg = TrainConfig()
    updated, _ = adam_step(params, ones, AdamState.zeros_like(params), cfg)
    expected_delta = cfg.learning_rate / (1.0 + cfg.eps_adam)
    for before, after in zip(params.astuple(), updated.astuple()):
        # float32 update arithmetic leaves a few ulp of slack
        np.testing.assert_allclose(before - after, expected_delta, rtol=1e-4)


def test_adam_matches_float64_oracle_over_steps():
    rng = derive_rng(204, "adam-oracle")
    cfg = TrainConfig(learning_rate=0.003)
    params = init_head(3, seed=2, feature_dim=4, hidden_dim=3)
    state = AdamState.zeros_like(params)
    oracle = {
        i: (np.array(p, np.float64), np.zeros_like(p, np.float64), np.zeros_like(p, np.float64))
        for i, p in enumerate(params.astuple())
    }
    for step in range(1, 8):
        grads = HeadParams(
            *(rng.normal(0, 1, a.shape).astype(np.float32) for a in params.astuple())
        )
        params, state = adam_step(params, grads, state, cfg)
        for i, g in enumerate(grads.astuple()):
            p64, m64, v64 = oracle[i]
            oracle[i] = oracles.adam_update_64(
                p64, g, m64, v64, step, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam
            )
    for i, p in enumerate(params.astuple()):
        np.testing.assert_allclose(p, oracle[i][0], rtol=1e-4, atol=1e-6)


def test_adam_rejects_nonfinite_gradients():
    params = init_head(2, seed=3, feature_dim=2, hidden_dim=2)
    bad = HeadGrads(*(np.full_like(a, np.nan) for a in params.astuple()))
    with pytest.raises(NumericError, match="w1"):
        adam_step(params, bad, AdamState.zeros_like(params), TrainConfig())


def test_one_hot_validates_range():
    got = one_hot(np.array([0, 2]), 3)
    np.testing.assert_array_equal(got, [[1, 0, 0], [0, 0, 1]])
    with pytest.raises(DataError):
        one_hot(np.array([3]), 3)
    with pytest.raises(DataError):
        one_hot(np.array([-1]), 3)


def test_init_head_glorot_bounds_and_determinism():
    a = init_head(36, seed=4)
    b = init_head(36, seed=4)
    for x, y in zip(a.astuple(), b.astuple()):
        np.testing.assert_array_equal(x, y)
    limit1 = np.sqrt(6.0 / (1280 + 1024))
    limit2 = np.sqrt(6.0 / (1024 + 36))
    assert np.abs(a.w1).max() <= limit1
    assert np.abs(a.w2).max() <= limit2
    assert np.all(a.b1 == 0) and np.all(a.b2 == 0)
    assert init_head(36, seed=5).w1[0, 0] != a.w1[0, 0]


def clustered_features(rng, n_per, classes, dim, spread=0.25):
    xs, ys = [], []
    centers = rng.normal(0, 1, (classes, dim))
    for c in range(classes):
        xs.append(centers[c] + rng.normal(0, spread, (n_per, dim)))
        ys.append(np.full(n_per, c))
    return np.concatenate(xs).astype(np.float32), np.concatenate(ys)


def test_training_is_bit_deterministic():
    rng = derive_rng(205, "det")
    x, y = clustered_features(rng, 12, 3, 16)
    xv, yv = clustered_features(rng, 4, 3, 16)
    cfg = TrainConfig(epochs=4, patience=10, seed=7)
    p1, h1 = train_head(x, y, xv, yv, cfg)
    p2, h2 = train_head(x, y, xv, yv, cfg)
    for a, b in zip(p1.astuple(), p2.astuple()):
        np.testing.assert_array_equal(a, b)
    assert [e.val_loss for e in h1.epochs] == [e.val_loss for e in h2.epochs]
    assert h1.best_epoch == h2.best_epoch


def test_returned_params_are_best_epoch_snapshot():
    rng = derive_rng(206, "best")
    x, y = clustered_features(rng, 10, 3, 8)
    # Validation labels permuted: as the head fits the training clusters the
    # validation loss rises, so the best epoch is early and later epochs must
    # not leak into the returned parameters.
    xv, yv = clustered_features(rng, 6, 3, 8)
    yv = (yv + 1) % 3
    cfg = TrainConfig(epochs=12, patience=2, seed=0)
    params, hist = train_head(x, y, xv, yv, cfg)
    losses = [e.val_loss for e in hist.epochs]
    assert hist.best_epoch == int(np.argmin(losses)) + 1
    _, probs = predict(params, xv)
    got = cross_entropy(probs, one_hot(yv, 3))
    assert got == pytest.approx(min(losses), rel=1e-6)


def test_early_stopping_streak_semantics():
    # Replay the recorded history through the stopping rule: training must
    # halt exactly when the non-improving streak first exceeds patience, and
    # ties must keep the earliest best epoch.
    rng = derive_rng(207, "stop")
    x, y = clustered_features(rng, 10, 3, 8)
    xv, yv = clustered_features(rng, 6, 3, 8)
    yv = (yv + 1) % 3
    for patience in (0, 1, 3):
        cfg = TrainConfig(epochs=40, patience=patience, seed=1)
        _, hist = train_head(x, y, xv, yv, cfg)
        best = np.inf
        streak = 0
        stopped_at = None
        for rec in hist.epochs:
            if rec.val_loss < best:
                best = rec.val_loss
                streak = 0
            else:
                streak += 1
                if streak > patience:
                    stopped_at = rec.epoch
                    break
        if stopped_at is not None:
            assert hist.epochs[-1].epoch == stopped_at
        else:
            assert len(hist.epochs) == cfg.epochs


def test_patience_one_worsening_after_first_stops_at_third_epoch():
    # Degenerate setup with a single constant training point and validation
    # labelled as the other class: validation loss strictly rises from the
    # first epoch on, so with patience 1 epochs run 1, 2, 3 and stop.
    x = np.ones((1, 4), np.float32)
    y = np.array([0])
    xv = np.ones((2, 4), np.float32)
    yv = np.array([1, 1])
    cfg = TrainConfig(epochs=10, patience=1, seed=0, batch_size=1)
    _, hist = train_head(x, y, xv, yv, cfg, num_classes=2)
    losses = [e.val_loss for e in hist.epochs]
    assert all(b > a for a, b in zip(losses, losses[1:]))
    assert len(hist.epochs) == 3
    assert hist.best_epoch == 1


def test_train_head_rejects_empty_sides():
    x = np.ones((2, 4), np.float32)
    with pytest.raises(ConfigError):
        train_head(np.ones((0, 4), np.float32), [], x, [0, 1], TrainConfig())
    with pytest.raises(ConfigError):
        train_head(x, [0, 1], np.ones((0, 4), np.float32), [], TrainConfig())


def test_checkpoint_roundtrip(tmp_path):
    params = init_head(4, seed=6, feature_dim=8, hidden_dim=5)
    cfg = TrainConfig(epochs=3, seed=6)
    path = tmp_path / "head.slrw"
    save_checkpoint(path, params, ["a", "b", "c", "d"], cfg)
    loaded, names, meta = load_checkpoint(path)
    for x, y in zip(params.astuple(), loaded.astuple()):
        np.testing.assert_array_equal(x, y)
    assert names == ["a", "b", "c", "d"]
    assert meta["kind"] == "head-checkpoint"


def test_checkpoint_rejects_missing_entries(tmp_path, monkeypatch):
    params = init_head(3, seed=7, feature_dim=4, hidden_dim=4)
    path = tmp_path / "head.slrw"
    save_checkpoint(path, params, ["x", "y", "z"], TrainConfig())
    bundle = load_bundle(path)
    bundle.entries.pop("head.fc2.bias")
    from signet.bundle import save_bundle

    save_bundle(path, bundle.entries, bundle.metadata)
    with pytest.raises(FormatError, match="fc2.bias"):
        load_checkpoint(path)


def test_predict_breaks_ties_toward_lowest_index():
    params = HeadParams(
        w1=np.zeros((2, 2), np.float32),
        b1=np.zeros(2, np.float32),
        w2=np.zeros((2, 3), np.float32),
        b2=np.zeros(3, np.float32),
    )
    idx, probs = predict(params, np.ones((1, 2), np.float32))
    assert idx[0] == 0
    np.testing.assert_allclose(probs, 1.0 / 3.0, rtol=1e-6)


def test_short_final_batch_is_trained_not_dropped():
    rng = derive_rng(208, "short-batch")
    x, y = clustered_features(rng, 7, 3, 6)  # 21 samples
    xv, yv = clustered_features(rng, 3, 3, 6)
    cfg_all = TrainConfig(epochs=1, batch_size=16, seed=2, patience=10)
    _, hist = train_head(x, y, xv, yv, cfg_all)
    # 21 samples with batch 16 = one full and one short batch; two Adam
    # steps. With batch 21 there is a single step, so results must differ
    # if the short batch was actually consumed.
    cfg_one = TrainConfig(epochs=1, batch_size=21, seed=2, patience=10)
    _, hist_one = train_head(x, y, xv, yv, cfg_one)
    assert hist.epochs[0].val_loss != hist_one.epochs[0].val_loss
