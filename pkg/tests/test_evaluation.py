import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pickstate.core import N_CHANNELS, Outcome, PickState, Trial
from pickstate.dataset import WindowingConfig, make_windows
from pickstate.evaluation import (
    NO_EVENT,
    TERMINAL_FAILURE,
    compute_metrics,
    detect_event_time,
    detect_from_labels,
    event_time_error,
    group_feature_columns,
    normalize_within_state,
    permutation_importance,
    per_state_recall,
)
from pickstate.forest import ForestConfig, train_forest
from pickstate.io import WindowTable
from pickstate.mlp import MlpConfig, train_mlp
from pickstate.preprocess import label_states

A, B = PickState.PICKING, PickState.PRE_FAILURE
P, F = PickState.PICKED, PickState.FAILED_PICK


# --- metrics ---------------------------------------------------------------


def oracle_metrics(truth, pred):
    """Per-class counts by direct enumeration."""
    out = {}
    for s in range(4):
        tp = sum(1 for t, p in zip(truth, pred) if t == s and p == s)
        fp = sum(1 for t, p in zip(truth, pred) if t != s and p == s)
        fn = sum(1 for t, p in zip(truth, pred) if t == s and p != s)
        if tp + fp + fn == 0:
            out[s] = None
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[s] = (prec, rec, f1)
    acc = sum(t == p for t, p in zip(truth, pred)) / len(truth)
    return acc, out


def test_metrics_hand_example():
    m = compute_metrics([A, A, B, B], [A, B, B, B])
    assert m.accuracy == 0.75
    a, b = m.per_class["Picking"], m.per_class["PreFailure"]
    assert (a.precision, a.recall) == (1.0, 0.5)
    assert a.f1 == pytest.approx(2 / 3)
    assert b.precision == pytest.approx(2 / 3)
    assert b.recall == 1.0
    assert b.f1 == pytest.approx(0.8)
    assert m.confusion.tolist()[:2] == [[1, 1, 0, 0], [0, 2, 0, 0]]
    assert not m.per_class["Picked"].defined and m.per_class["Picked"].recall is None


def test_perfect_predictions():
    truth = [A, B, P, F, A, F]
    m = compute_metrics(truth, truth)
    assert m.accuracy == 1.0
    for c in m.per_class.values():
        assert (c.precision, c.recall, c.f1) == (1.0, 1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_metrics_match_oracle(pairs):
    truth, pred = zip(*pairs)
    m = compute_metrics(truth, pred)
    acc, per = oracle_metrics(truth, pred)
    assert m.accuracy == pytest.approx(acc, abs=1e-12)
    assert m.accuracy == np.trace(m.confusion) / m.confusion.sum()
    assert m.confusion.sum() == len(truth)
    for s in PickState:
        c = m.per_class[s.label]
        if per[s] is None:
            assert not c.defined and c.precision is None
        else:
            assert (c.precision, c.recall, c.f1) == pytest.approx(per[s], abs=1e-12)
    # micro-averaged recall is accuracy
    tp = sum(m.confusion[s, s] for s in range(4))
    assert tp / m.confusion.sum() == m.accuracy


def test_zero_division_flagged():
    m = compute_metrics([A, A], [A, B])
    b = m.per_class["PreFailure"]
    assert b.defined and b.zero_division
    assert (b.precision, b.recall, b.f1) == (0.0, 0.0, 0.0)


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics([A, B], [A])
    with pytest.raises(ValueError):
        compute_metrics([], [])


# --- event detection -------------------------------------------------------


def test_detect_success_example():
    preds = list(zip([0.5, 1.0, 1.5, 2.0, 2.5], [A, A, A, P, P]))
    det = detect_event_time(preds, 2)
    assert (det.outcome, det.time_s) == (Outcome.SUCCESS, 2.0)


def test_spurious_window_ignored():
    preds = list(zip([0.5, 1.0, 1.5, 2.0, 2.5], [A, A, F, A, A]))
    assert detect_event_time(preds, 2) == NO_EVENT


def test_all_picking_no_event():
    assert detect_event_time([(t, A) for t in range(10)]) == NO_EVENT


def test_failure_reported_at_first_failed_window():
    preds = list(zip([1, 2, 3, 4, 5, 6], [A, B, B, F, F, A]))
    det = detect_event_time(preds, 2)
    assert (det.outcome, det.time_s, det.window_index) == (Outcome.FAILURE, 4.0, 3)
    # a prefailure run with no failed window is not an event
    assert detect_event_time(list(zip([1, 2, 3], [B, B, A]))) == NO_EVENT


def test_detect_errors():
    with pytest.raises(ValueError):
        detect_event_time([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=40), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_detection_ignores_later_predictions(codes, k, seed):
    times = [0.1 * (i + 1) for i in range(len(codes))]
    det = detect_event_time(zip(times, codes), k)
    if not det.detected:
        return
    i = det.window_index
    start = i
    group = (PickState.PICKED,) if det.outcome is Outcome.SUCCESS else TERMINAL_FAILURE
    while start > 0 and PickState(codes[start - 1]) in group:
        start -= 1
    keep = max(i, start + k - 1) + 1
    tail = np.random.default_rng(seed).integers(0, 4, size=len(codes) - keep).tolist()
    again = detect_event_time(zip(times, codes[:keep] + tail), k)
    assert again == det


@pytest.mark.parametrize("outcome", list(Outcome))
@pytest.mark.parametrize("seed", range(10))
def test_perfect_predictions_quantization_bound(outcome, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(200, 400))
    event = float(rng.uniform(1.0, n / 50 - 0.5))
    trial = Trial("q", 50.0, np.zeros((n, N_CHANNELS)), outcome, event)
    windows = make_windows(trial, label_states(trial), WindowingConfig(5, 5))
    det = detect_from_labels([w.end_time_s for w in windows], [w.label for w in windows])
    assert det.outcome is outcome
    assert 0.0 <= det.time_s - event <= 0.1


class ThresholdModel:
    """Predicts Picked once the time stamp in feature 0 passes a threshold."""

    channels = None

    def __init__(self, at):
        self.at = at

    def predict(self, X):
        return np.where(X[:, 0] >= self.at - 1e-9, int(P), int(A))


def _clock_trial(tid="c"):
    n = 60
    x = np.zeros((n, N_CHANNELS))
    x[:, 0] = np.arange(n) / 10.0
    return Trial(tid, 10.0, x, Outcome.SUCCESS, 3.0)


def test_event_time_error_arithmetic():
    res = event_time_error([_clock_trial()], ThresholdModel(3.1), WindowingConfig(1, 1))
    assert res["mean_abs_error_s"] == pytest.approx(0.1)
    assert res["n_missed"] == 0
    assert res["per_trial"][0]["predicted_outcome"] == "success"


def test_event_time_error_counts_misses():
    res = event_time_error([_clock_trial("a"), _clock_trial("b")], ThresholdModel(99.0), WindowingConfig(1, 1))
    assert res["mean_abs_error_s"] is None
    assert (res["n_missed"], res["miss_rate"]) == (2, 1.0)


# --- permutation importance --------------------------------------------------


def _random_windows(n=240, seed=0, constant_tof=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5 * N_CHANNELS))
    y = rng.integers(0, 4, size=n)
    X[:, 0] += 3 * y  # force fx at step 0 carries the label
    if constant_tof:
        X[:, 11::N_CHANNELS] = 3.0
    return WindowTable(X, y, ["w"] * n, np.zeros(n))


@pytest.mark.parametrize("kind", ["rf", "mlp"])
def test_constant_group_has_zero_importance(kind):
    data = _random_windows(constant_tof=True)
    if kind == "rf":
        model = train_forest(data, ForestConfig(n_trees=10), 0)
    else:
        model = train_mlp(data, data, MlpConfig(hidden=(8,), max_epochs=5), 0)
    imp = permutation_importance(model, _random_windows(seed=1, constant_tof=True), n_repeats=3, seed=2)
    assert np.all(imp.raw[:, 3] == 0.0)
    assert np.all(imp.normalized[:, 3] == 0.0)


def pressure_windows(n=400, seed=0, channels=None):
    """Pressure level encodes the state; every other channel is noise."""
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(4), n // 4)
    full = rng.normal(size=(n, 5, N_CHANNELS))
    full[:, :, 6] = y[:, None] + rng.uniform(0.0, 0.8, size=(n, 5))
    if channels is not None:
        full = full[:, :, list(channels)]
    return WindowTable(full.reshape(n, -1), y, ["p"] * n, np.zeros(n), channels=channels)


def test_pressure_only_model_pressure_dominates():
    model = train_forest(pressure_windows(channels=(6,)), ForestConfig(n_trees=20), 0)
    imp = permutation_importance(model, pressure_windows(seed=1, channels=(6,)), n_repeats=5, seed=3)
    assert imp.normalized[:, 1].tolist() == [1.0, 1.0, 1.0, 1.0]
    assert np.all(imp.normalized[:, [0, 2, 3]] == 0.0)


def test_pressure_informed_full_layout():
    model = train_forest(pressure_windows(), ForestConfig(n_trees=20, features_per_split=60), 0)
    used = {int(f) for t in model.trees for f in t.feature if f >= 0}
    assert all(f % N_CHANNELS == 6 for f in used)
    imp = permutation_importance(model, pressure_windows(seed=1), n_repeats=5, seed=3)
    assert imp.normalized[:, 1].tolist() == [1.0, 1.0, 1.0, 1.0]


def test_permutation_deterministic():
    model = train_forest(_random_windows(), ForestConfig(n_trees=10), 0)
    test = _random_windows(seed=4)
    a = permutation_importance(model, test, 4, seed=9)
    b = permutation_importance(model, test, 4, seed=9)
    assert np.array_equal(a.raw, b.raw)
    assert np.array_equal(a.normalized, b.normalized)


def test_absent_state_row_is_nan():
    model = train_forest(_random_windows(), ForestConfig(n_trees=5), 0)
    test = _random_windows(seed=2)
    keep = test.y != 3
    sub = WindowTable(test.X[keep], test.y[keep], test.trial_ids[keep], test.end_times[keep])
    imp = permutation_importance(model, sub, 2, 0)
    assert np.all(np.isnan(imp.normalized[3]))
    assert not np.any(np.isnan(imp.normalized[:3]))


def test_normalize_within_state():
    raw = np.array([[0.2, -0.4, 0.1, 0.0], [0, 0, 0, 0], [np.nan] * 4, [0.5, 0.5, 0.0, -0.1]])
    out = normalize_within_state(raw)
    assert out[0].tolist() == [0.5, -1.0, 0.25, 0.0]
    assert out[1].tolist() == [0, 0, 0, 0]
    assert np.all(np.isnan(out[2]))
    assert out[3].tolist() == [1.0, 1.0, 0.0, -0.2]


def test_group_feature_columns():
    cols = {g.value: c for g, c in group_feature_columns(60).items()}
    assert len(cols["force"]) == 30 and len(cols["pressure"]) == 5
    assert cols["pressure"] == [6, 18, 30, 42, 54]
    sub = {g.value: c for g, c in group_feature_columns(10, channels=(6, 11)).items()}
    assert sub["pressure"] == [0, 2, 4, 6, 8] and sub["force"] == []


def test_per_state_recall():
    r = per_state_recall([0, 0, 1, 2], [0, 1, 1, 0])
    assert r[:3].tolist() == [0.5, 1.0, 0.0]
    assert np.isnan(r[3])
