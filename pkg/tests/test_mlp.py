import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pickstate.core import PickState
from pickstate.io import WindowTable
from pickstate.mlp import (
    MlpConfig,
    MlpModel,
    Standardizer,
    TrainingDiverged,
    cross_entropy,
    fit_standardizer,
    gradient_check,
    loss_and_grads,
    make_network,
    predict_mlp,
    softmax,
    train_mlp,
)


def table(X, y):
    X = np.asarray(X, dtype=float)
    return WindowTable(X, np.asarray(y), ["t"] * len(X), np.zeros(len(X)))


def blobs(n=200, seed=0, dim=4):
    """Two well separated Gaussian blobs, labelled Picking / Picked."""
    rng = np.random.default_rng(seed)
    y = np.array([0, 2] * (n // 2))
    centers = np.where(y[:, None] == 0, -3.0, 3.0)
    X = centers + rng.normal(size=(n, dim))
    return X, y


SMALL = MlpConfig(hidden=(16, 8))


@pytest.fixture(scope="module")
def blob_model():
    X, y = blobs()
    return train_mlp(table(X[:160], y[:160]), table(X[160:], y[160:]), SMALL, seed=3)


def test_standardizer_moments():
    X = np.random.default_rng(0).normal(5.0, 3.0, size=(50, 6))
    Z = fit_standardizer(table(X, np.zeros(50, int))).transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-6)


def test_standardizer_constant_feature():
    X = np.column_stack([np.full(10, 4.2), np.arange(10.0)])
    s = fit_standardizer(table(X, np.zeros(10, int)))
    assert s.std[0] == 1.0
    assert np.all(s.transform(X)[:, 0] == 0.0)


def test_standardizer_hand_arithmetic():
    # mean (1, 10), population std (1, 1) -> held-out (3, 12) maps to (2, 2)
    s = fit_standardizer(table([[0.0, 9.0], [2.0, 11.0]], [0, 0]))
    assert s.mean.tolist() == [1.0, 10.0]
    assert s.std.tolist() == [1.0, 1.0]
    assert s.transform([[3.0, 12.0]]).tolist() == [[2.0, 2.0]]


def test_standardizer_needs_two_windows():
    with pytest.raises(ValueError):
        fit_standardizer(table([[1.0, 2.0]], [0]))


def test_blobs_reach_high_val_accuracy(blob_model):
    X, y = blobs()
    assert np.mean(blob_model.predict(X[160:]) == y[160:]) >= 0.99
    assert blob_model.history["epochs_run"] <= 200


def test_epochs_never_exceed_limit():
    X, y = blobs(64, seed=1)
    # noisy labels keep val accuracy moving, so only the cap can stop it
    y = np.random.default_rng(2).integers(0, 4, size=64)
    model = train_mlp(table(X, y), table(X[:16], y[:16]), MlpConfig(hidden=(4,), max_epochs=7, patience=100), 0)
    assert model.history["epochs_run"] == 7


def test_training_deterministic(blob_model):
    X, y = blobs()
    again = train_mlp(table(X[:160], y[:160]), table(X[160:], y[160:]), SMALL, seed=3)
    assert again.to_dict() == blob_model.to_dict()


def test_best_epoch_has_max_val_accuracy(blob_model):
    h = blob_model.history
    assert h["val_accuracy"][h["best_epoch"]] == max(h["val_accuracy"])
    # ties keep the earliest epoch, since improvement must be strict
    assert h["best_epoch"] == h["val_accuracy"].index(max(h["val_accuracy"]))


def test_returns_best_epoch_parameters():
    X, y = blobs(120, seed=4)
    Xv, yv = X[100:], y[100:]
    model = train_mlp(table(X[:100], y[:100]), table(Xv, yv), SMALL, seed=8)
    h = model.history
    assert np.mean(model.predict(Xv) == yv) == h["val_accuracy"][h["best_epoch"]]


def test_blob_probe(blob_model):
    state, proba = predict_mlp(blob_model, np.full(4, -3.0))
    assert state is PickState.PICKING
    assert proba[0] == proba.max()
    assert predict_mlp(blob_model, np.full(4, 3.0))[0] is PickState.PICKED


def test_zero_weights_give_uniform():
    model = make_network([6, 5, 4], seed=0)
    model.weights = [np.zeros_like(W) for W in model.weights]
    _, proba = predict_mlp(model, np.ones(6))
    assert proba.tolist() == [0.25, 0.25, 0.25, 0.25]
    state, _ = predict_mlp(model, np.ones(6))
    assert state is PickState.PICKING


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1e3))
def test_probabilities_form_simplex(seed, scale):
    model = make_network([6, 5, 4], seed=seed % 17)
    X = np.random.default_rng(seed).normal(size=(10, 6)) * scale
    p = model.predict_proba(X)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.isfinite(cross_entropy(model.logits(X), np.zeros(10, int)))


def test_softmax_extremes():
    p = softmax(np.array([[1000.0, -1000.0, 0.0, 0.0]]))
    assert np.all(np.isfinite(p))
    assert p[0, 0] == 1.0
    # clamped probability keeps the loss finite
    assert cross_entropy(np.array([[1000.0, -1000.0, 0.0, 0.0]]), np.array([1])) == pytest.approx(-np.log(1e-12))


def test_rejects_bad_input():
    model = make_network([6, 5, 4], seed=0)
    with pytest.raises(ValueError):
        predict_mlp(model, np.array([1, 2, 3, np.nan, 5, 6.0]))
    with pytest.raises(ValueError):
        predict_mlp(model, np.ones(5))


def test_empty_val_rejected():
    X, y = blobs(20)
    with pytest.raises(ValueError):
        train_mlp(table(X, y), table(np.zeros((0, 4)), []), SMALL)


def test_divergence_raises():
    X, y = blobs(40)
    cfg = MlpConfig(hidden=(8,), learning_rate=1e300)
    with pytest.raises(TrainingDiverged):
        with np.errstate(all="ignore"):
            train_mlp(table(X * 1e300, y), table(X * 1e300, y), cfg, 0, standardizer=Standardizer.identity(4))


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check_small_net(seed):
    model = make_network([6, 5, 4, 3], seed)
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(8, 6)), rng.integers(0, 3, size=8)
    assert gradient_check(model, X, y) <= 1e-4


def test_gradient_check_degenerate_batch():
    model = make_network([6, 5, 4, 3], 1)
    X, y = np.ones((8, 6)), np.zeros(8, int)
    _, gw, gb = loss_and_grads(model.weights, model.biases, X, y)
    assert all(np.all(np.isfinite(g)) for g in gw + gb)
    assert gradient_check(model, X, y) <= 1e-4


def test_gradient_check_detects_wrong_gradient(monkeypatch):
    import pickstate.mlp as mlp_mod

    real = mlp_mod.loss_and_grads

    def broken(weights, biases, X, y):
        loss, gw, gb = real(weights, biases, X, y)
        return loss, [g * 1.01 for g in gw], gb

    monkeypatch.setattr(mlp_mod, "loss_and_grads", broken)
    model = make_network([6, 5, 4, 3], 0)
    rng = np.random.default_rng(0)
    assert gradient_check(model, rng.normal(size=(8, 6)), rng.integers(0, 3, size=8)) > 1e-3


def test_gradient_check_deterministic():
    model = make_network([6, 5, 4, 3], 2)
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(8, 6)), rng.integers(0, 3, size=8)
    assert gradient_check(model, X, y, seed=5) == gradient_check(model, X, y, seed=5)


def test_first_order_consistency():
    model = make_network([6, 5, 4, 3], 4)
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(16, 6)), rng.integers(0, 3, size=16)
    loss, gw, gb = loss_and_grads(model.weights, model.biases, X, y)
    sq = sum(float(np.sum(g * g)) for g in gw + gb)
    for lr in (1e-3, 1e-4, 1e-5):
        W = [w - lr * g for w, g in zip(model.weights, gw)]
        b = [c - lr * g for c, g in zip(model.biases, gb)]
        new, _, _ = loss_and_grads(W, b, X, y)
        # predicted change -lr*|g|^2, residual shrinks like lr^2
        assert abs((new - loss) + lr * sq) <= 50 * lr * lr * max(sq, 1.0)


def test_default_shapes():
    model = make_network([60, 150, 50, 4], 0)
    assert [W.shape for W in model.weights] == [(60, 150), (150, 50), (50, 4)]
    assert [b.shape for b in model.biases] == [(150,), (50,), (4,)]


def test_serialization_round_trip(blob_model):
    back = MlpModel.from_dict(blob_model.to_dict())
    X, _ = blobs(30, seed=9)
    assert np.array_equal(back.predict_proba(X), blob_model.predict_proba(X))
    assert back.to_dict() == blob_model.to_dict()
    with pytest.raises(ValueError):
        MlpModel.from_dict({**blob_model.to_dict(), "version": 99})
