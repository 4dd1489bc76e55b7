"""Classification metrics, event-time scoring, permutation importance and sensor ablation."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    CHANNELS,
    N_CHANNELS,
    N_STATES,
    SENSOR_GROUPS,
    Outcome,
    PickState,
    Trial,
    channels_for_groups,
    derive_seed,
    make_rng,
)
from .dataset import AugmentConfig, WindowingConfig, augment_split, build_window_table, make_windows
from .forest import ForestConfig, impurity_importance, sensor_group_importance, train_forest
from .io import WindowTable
from .mlp import MlpConfig, train_mlp

log = logging.getLogger(__name__)

STATE_NAMES = [s.label for s in PickState]
GROUP_NAMES = [g.value for g in SENSOR_GROUPS]
TERMINAL_FAILURE = (PickState.PRE_FAILURE, PickState.FAILED_PICK)


@dataclass
class ClassMetrics:
    precision: float | None
    recall: float | None
    f1: float | None
    support: int
    predicted: int
    defined: bool = True
    zero_division: bool = False


@dataclass
class Metrics:
    accuracy: float
    per_class: dict  # state label -> ClassMetrics
    confusion: np.ndarray  # rows true, columns predicted

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {k: asdict(v) for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(truth, pred) -> np.ndarray:
    cm = np.zeros((N_STATES, N_STATES), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def compute_metrics(truth, pred) -> Metrics:
    """Accuracy plus per-state precision/recall/F1.

    A state absent from both truth and prediction is marked undefined with
    ``None`` values. A zero denominator otherwise yields 0 and sets
    ``zero_division``.
    """
    truth = np.asarray([int(s) for s in truth], dtype=np.int64)
    pred = np.asarray([int(s) for s in pred], dtype=np.int64)
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truths vs {len(pred)} predictions")
    if len(truth) == 0:
        raise ValueError("no predictions to score")
    cm = confusion_matrix(truth, pred)
    per_class = {}
    for s in PickState:
        tp = int(cm[s, s])
        support = int(cm[s, :].sum())
        predicted = int(cm[:, s].sum())
        if support == 0 and predicted == 0:
            per_class[s.label] = ClassMetrics(None, None, None, 0, 0, defined=False)
            continue
        zero_div = predicted == 0 or support == 0
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1, zero_div = 0.0, True
        per_class[s.label] = ClassMetrics(precision, recall, f1, support, predicted, True, zero_div)
    return Metrics(float(np.trace(cm) / cm.sum()), per_class, cm)


@dataclass(frozen=True)
class EventDetection:
    outcome: Outcome | None
    time_s: float | None
    window_index: int | None = None

    @property
    def detected(self) -> bool:
        return self.outcome is not None


NO_EVENT = EventDetection(None, None, None)


def detect_event_time(window_preds, debounce_k: int = 2) -> EventDetection:
    """Earliest debounced pick or slip in one trial's ordered window predictions.

    A run of ``>= k`` Picked windows declares success at the run's first
    window. A run of ``>= k`` PreFailure/FailedPick windows containing a
    FailedPick declares failure at that run's first FailedPick window.
    """
    window_preds = list(window_preds)
    if not window_preds:
        raise ValueError("no window predictions")
    if debounce_k < 1:
        raise ValueError("debounce_k must be >= 1")
    times = [float(t) for t, _ in window_preds]
    codes = [PickState(int(s)) for _, s in window_preds]
    n = len(codes)
    i = 0
    while i < n:
        if codes[i] is PickState.PICKED:
            j = i
            while j < n and codes[j] is PickState.PICKED:
                j += 1
            if j - i >= debounce_k:
                return EventDetection(Outcome.SUCCESS, times[i], i)
            i = j
        elif codes[i] in TERMINAL_FAILURE:
            j = i
            while j < n and codes[j] in TERMINAL_FAILURE:
                j += 1
            if j - i >= debounce_k and PickState.FAILED_PICK in codes[i:j]:
                f = codes.index(PickState.FAILED_PICK, i, j)
                return EventDetection(Outcome.FAILURE, times[f], f)
            i = j
        else:
            i += 1
    return NO_EVENT


def _model_channels(model):
    return getattr(model, "channels", None)


def trial_predictions(model, trial: Trial, win_cfg: WindowingConfig = WindowingConfig(), labels=None):
    """Window end times, true codes and predicted codes for one trial."""
    windows = make_windows(trial, labels, win_cfg, _model_channels(model))
    if not windows:
        return np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    table = WindowTable.from_samples(windows)
    return table.end_times, table.y, model.predict(table.X)


def detect_from_labels(end_times, labels, debounce_k: int = 2) -> EventDetection:
    return detect_event_time(zip(end_times, labels), debounce_k)


def event_time_error(trials, model, win_cfg: WindowingConfig = WindowingConfig(), debounce_k: int = 2) -> dict:
    """Mean |detected - true| event time over trials where an event was detected."""
    per_trial = []
    errors = []
    missed = 0
    for trial in trials:
        ends, _, pred = trial_predictions(model, trial, win_cfg)
        det = detect_event_time(zip(ends, pred), debounce_k) if len(ends) else NO_EVENT
        row = {
            "trial_id": trial.id,
            "true_outcome": trial.outcome.value,
            "true_event_s": float(trial.event_time_s),
            "predicted_outcome": det.outcome.value if det.detected else None,
            "predicted_event_s": det.time_s,
            "abs_error_s": None,
        }
        if det.detected:
            row["abs_error_s"] = abs(det.time_s - trial.event_time_s)
            errors.append(row["abs_error_s"])
        else:
            missed += 1
        per_trial.append(row)
    n = len(per_trial)
    return {
        "mean_abs_error_s": float(np.mean(errors)) if errors else None,
        "n_trials": n,
        "n_missed": missed,
        "miss_rate": missed / n if n else None,
        "outcome_accuracy": (
            float(np.mean([r["predicted_outcome"] == r["true_outcome"] for r in per_trial])) if n else None
        ),
        "per_trial": per_trial,
    }


def group_feature_columns(n_features: int, channels=None) -> dict:
    """Feature indices belonging to each sensor group for a step-major layout."""
    channels = tuple(range(N_CHANNELS)) if channels is None else tuple(channels)
    n_ch = len(channels)
    cols = {g: [] for g in SENSOR_GROUPS}
    for f in range(n_features):
        cols[CHANNELS[channels[f % n_ch]].sensor_group].append(f)
    return cols


def per_state_recall(truth, pred) -> np.ndarray:
    truth, pred = np.asarray(truth), np.asarray(pred)
    out = np.full(N_STATES, np.nan)
    for s in range(N_STATES):
        mask = truth == s
        if mask.any():
            out[s] = np.mean(pred[mask] == s)
    return out


@dataclass
class PermutationImportance:
    normalized: np.ndarray  # (state, group); rows of absent states are NaN
    raw: np.ndarray
    baseline_recall: np.ndarray


def normalize_within_state(raw) -> np.ndarray:
    """Divide each state row by its largest absolute entry, keeping signs."""
    raw = np.asarray(raw, dtype=np.float64)
    out = raw.copy()
    for s in range(raw.shape[0]):
        row = raw[s]
        if np.all(np.isnan(row)):
            continue
        peak = np.nanmax(np.abs(row))
        if peak > 0:
            out[s] = row / peak
    return out


def permutation_importance(model, test_windows, n_repeats: int = 10, seed: int = 0) -> PermutationImportance:
    """Per-state recall drop when one sensor group's columns are shuffled jointly."""
    X, y = test_windows.X, test_windows.y
    if len(y) == 0:
        raise ValueError("empty test set")
    base = per_state_recall(y, model.predict(X))
    cols = group_feature_columns(X.shape[1], _model_channels(model))
    raw = np.zeros((N_STATES, len(SENSOR_GROUPS)))
    for g_idx, group in enumerate(SENSOR_GROUPS):
        c = cols[group]
        if not c:
            continue
        drops = np.zeros(N_STATES)
        for r in range(n_repeats):
            perm = make_rng(derive_seed(seed, f"perm:{group.value}", r)).permutation(len(y))
            Xp = X.copy()
            Xp[:, c] = X[perm][:, c]
            drops += base - per_state_recall(y, model.predict(Xp))
        raw[:, g_idx] = drops / n_repeats
    raw[np.isnan(base)] = np.nan
    return PermutationImportance(normalize_within_state(raw), raw, base)


def model_id(model) -> str:
    blob = json.dumps(model.to_dict(), sort_keys=True).encode()
    return f"{model.kind}-{hashlib.sha256(blob).hexdigest()[:12]}"


def _nan_to_none(a):
    return [[None if np.isnan(v) else float(v) for v in row] for row in np.asarray(a, dtype=np.float64)]


@dataclass
class EvaluationReport:
    model_kind: str
    model_id: str
    metrics: Metrics
    event_time: dict
    importance: PermutationImportance
    impurity_group_importance: list | None = None
    config_digest: str = ""
    seed: int = 0
    timelines: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.metrics.accuracy

    def recall(self, state: PickState) -> float | None:
        return self.metrics.per_class[state.label].recall

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "model_id": self.model_id,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "states": STATE_NAMES,
            "sensor_groups": GROUP_NAMES,
            "metrics": self.metrics.to_dict(),
            "event_time": self.event_time,
            "permutation_importance": {
                "normalized": _nan_to_none(self.importance.normalized),
                "raw": _nan_to_none(self.importance.raw),
                "baseline_recall": [None if np.isnan(v) else float(v) for v in self.importance.baseline_recall],
            },
            "impurity_group_importance": self.impurity_group_importance,
            "timelines": self.timelines,
        }


def build_timeline(model, trial: Trial, win_cfg: WindowingConfig = WindowingConfig(), debounce_k: int = 2) -> list:
    ends, truth, pred = trial_predictions(model, trial, win_cfg)
    if not len(ends):
        return []
    true_det = detect_from_labels(ends, truth, debounce_k)
    pred_det = detect_from_labels(ends, pred, debounce_k)
    return [
        {
            "time_s": float(ends[i]),
            "true_state": STATE_NAMES[truth[i]],
            "predicted_state": STATE_NAMES[pred[i]],
            "true_event": int(true_det.window_index == i),
            "predicted_event": int(pred_det.window_index == i),
        }
        for i in range(len(ends))
    ]


def evaluate_model(model, test_windows: WindowTable, test_trials, seed: int = 0, n_repeats: int = 10,
                   win_cfg: WindowingConfig = WindowingConfig(), debounce_k: int = 2,
                   config_digest: str = "") -> EvaluationReport:
    pred = model.predict(test_windows.X)
    metrics = compute_metrics(test_windows.y, pred)
    events = event_time_error(test_trials, model, win_cfg, debounce_k)
    importance = permutation_importance(model, test_windows, n_repeats, seed)
    impurity = None
    if model.kind == "rf":
        impurity = sensor_group_importance(impurity_importance(model), model.channels).tolist()
    timelines = {t.id: build_timeline(model, t, win_cfg, debounce_k) for t in test_trials}
    return EvaluationReport(model.kind, model_id(model), metrics, events, importance, impurity,
                            config_digest, int(seed), timelines)


def fit_models(train_trials, val_trials, seed: int, channels=None,
               aug_cfg: AugmentConfig = AugmentConfig(), win_cfg: WindowingConfig = WindowingConfig(),
               forest_cfg: ForestConfig = ForestConfig(), mlp_cfg: MlpConfig = MlpConfig()):
    """Augment the training trials, window everything and train both classifiers."""
    augmented = augment_split(train_trials, aug_cfg, seed)
    train = build_window_table(augmented, win_cfg, channels)
    val = build_window_table(val_trials, win_cfg, channels)
    if len(val) == 0:
        val = train
    rf = train_forest(train, forest_cfg, seed)
    mlp = train_mlp(train, val, mlp_cfg, seed)
    return rf, mlp


def ablate_sensor_subsets(trials, split, subsets, seed: int,
                          aug_cfg: AugmentConfig = AugmentConfig(), win_cfg: WindowingConfig = WindowingConfig(),
                          forest_cfg: ForestConfig = ForestConfig(), mlp_cfg: MlpConfig = MlpConfig()) -> list:
    """Retrain and score both models on each sensor-group subset.

    Every subset reuses ``split`` and ``seed``, so the all-groups row matches
    the full pipeline.
    """
    by_id = {t.id: t for t in trials}
    train_trials = [by_id[i] for i in split.train]
    val_trials = [by_id[i] for i in split.val]
    test_trials = [by_id[i] for i in split.test]
    rows = []
    for subset in subsets:
        groups = tuple(g for g in SENSOR_GROUPS if g in set(subset))
        if not groups:
            log.warning("skipping empty sensor subset")
            continue
        channels = channels_for_groups(groups)
        if channels == tuple(range(N_CHANNELS)):
            channels = None
        rf, mlp = fit_models(train_trials, val_trials, seed, channels, aug_cfg, win_cfg, forest_cfg, mlp_cfg)
        test = build_window_table(test_trials, win_cfg, channels)
        for model in (rf, mlp):
            m = compute_metrics(test.y, model.predict(test.X))
            rows.append({
                "subset": "+".join(g.value for g in groups),
                "model": model.kind,
                "n_features": test.n_features,
                "accuracy": m.accuracy,
                "prefailure_recall": m.per_class[PickState.PRE_FAILURE.label].recall,
                "picked_recall": m.per_class[PickState.PICKED.label].recall,
            })
    return rows
