"""Signal conditioning, grasp-onset cropping, resampling and state labeling."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import N_CHANNELS, Outcome, PickState, SensorGroup, Trial, group_columns

WINDOW_LEN = 5
# Label boundaries compare sample times against event times with this slack.
TIME_EPS = 1e-9


class OnsetNotFound(ValueError):
    pass


class PreprocessDataError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    median_window: int = 5
    smooth_window: int = 5
    onset_pressure_threshold: float | None = None  # None: estimate from the data
    target_length: int = 256
    pre_failure_band_s: float = 1.0

    def validate(self) -> None:
        for name in ("median_window", "smooth_window"):
            _check_window(getattr(self, name))
        if self.target_length < WINDOW_LEN:
            raise ValueError(f"target_length must be >= {WINDOW_LEN}")
        if self.pre_failure_band_s < 0:
            raise ValueError("pre_failure_band_s must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_window(w) -> None:
    if int(w) != w or w < 1 or w % 2 == 0:
        raise ValueError(f"window must be an odd positive integer, got {w}")


def _padded_windows(x, w):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < 1:
        raise ValueError("expected a non-empty 1-D series")
    half = w // 2
    return sliding_window_view(np.pad(x, half, mode="edge"), w)


def median_filter(x, w: int) -> np.ndarray:
    """Running median over ``w`` samples, edges padded by replication."""
    _check_window(w)
    return np.median(_padded_windows(x, w), axis=1)


def moving_average(x, w: int) -> np.ndarray:
    """Running mean over ``w`` samples, edges padded by replication."""
    _check_window(w)
    return np.mean(_padded_windows(x, w), axis=1)


def min_max_normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def detect_grasp_onset(pressure, threshold: float) -> int:
    """Index of the first sample strictly below ``threshold``."""
    pressure = np.asarray(pressure, dtype=np.float64)
    if pressure.size == 0:
        raise ValueError("empty pressure series")
    below = np.flatnonzero(pressure < threshold)
    if below.size == 0:
        raise OnsetNotFound(f"pressure never drops below {threshold}")
    return int(below[0])


def _plateaus(pressure):
    pressure = np.asarray(pressure, dtype=np.float64)
    return float(np.median(pressure[:5])), float(np.percentile(pressure, 5))


def estimate_onset_threshold(trials) -> float:
    """Midpoint between the atmospheric and vacuum plateau levels of a corpus.

    Atmospheric is the median of each trial's leading samples, vacuum the
    median of each trial's 5th-percentile pressure.
    """
    col = group_columns(SensorGroup.PRESSURE)[0]
    levels = np.array([_plateaus(t.samples[:, col]) for t in trials])
    return float((np.median(levels[:, 0]) + np.median(levels[:, 1])) / 2.0)


def crop_and_resample(trial: Trial, onset: int, target_length: int) -> Trial:
    """Drop samples before ``onset`` and linearly resample to ``target_length``.

    The resampled grid spans the cropped duration exactly, so the first and
    last samples are kept verbatim.
    """
    if not 0 <= onset < trial.n_samples:
        raise PreprocessDataError(f"onset {onset} outside trial of {trial.n_samples} samples")
    onset_time = onset / trial.sample_rate_hz
    event = trial.event_time_s - onset_time
    if event < -TIME_EPS:
        raise PreprocessDataError(f"trial {trial.id}: event at {trial.event_time_s}s precedes onset at {onset_time}s")
    event = max(event, 0.0)
    cropped = trial.samples[onset:]
    n = cropped.shape[0]
    if n == target_length or n == 1:
        samples, fs = cropped, trial.sample_rate_hz
        if n == 1 and target_length != 1:
            samples = np.repeat(cropped, target_length, axis=0)
    else:
        pos = np.linspace(0.0, n - 1, target_length)
        src = np.arange(n, dtype=np.float64)
        samples = np.column_stack([np.interp(pos, src, cropped[:, c]) for c in range(N_CHANNELS)])
        span = (n - 1) / trial.sample_rate_hz
        fs = (target_length - 1) / span
    event = min(event, len(samples) / fs)
    return trial.with_samples(samples, sample_rate_hz=fs, event_time_s=event, onset_index=0)


def label_states(trial: Trial, pre_failure_band_s: float = 1.0) -> np.ndarray:
    """Per-sample PickState codes; the sample at the event takes the later state."""
    t = trial.times
    event = trial.event_time_s
    labels = np.full(trial.n_samples, int(PickState.PICKING), dtype=np.int64)
    terminal = t >= event - TIME_EPS
    if trial.outcome is Outcome.SUCCESS:
        labels[terminal] = PickState.PICKED
    else:
        band_start = max(0.0, event - pre_failure_band_s)
        labels[(t >= band_start - TIME_EPS) & ~terminal] = PickState.PRE_FAILURE
        labels[terminal] = PickState.FAILED_PICK
    return labels


def condition_channels(samples, cfg: PreprocessConfig) -> np.ndarray:
    out = np.array(samples, dtype=np.float64)
    for c in group_columns(SensorGroup.FORCE):
        out[:, c] = median_filter(out[:, c], cfg.median_window)
    for c in group_columns(SensorGroup.FLEX):
        out[:, c] = moving_average(min_max_normalize(out[:, c]), cfg.smooth_window)
    return out


def preprocess_trial(trial: Trial, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[Trial, np.ndarray]:
    cfg.validate()
    conditioned = trial.with_samples(condition_channels(trial.samples, cfg))
    threshold = cfg.onset_pressure_threshold
    if threshold is None:
        threshold = estimate_onset_threshold([trial])
    pressure = conditioned.samples[:, group_columns(SensorGroup.PRESSURE)[0]]
    onset = detect_grasp_onset(pressure, threshold)
    prepped = crop_and_resample(conditioned, onset, cfg.target_length)
    return prepped, label_states(prepped, cfg.pre_failure_band_s)


def preprocess_corpus(trials, cfg: PreprocessConfig = PreprocessConfig()):
    """Preprocess every trial, estimating one onset threshold for the corpus if unset."""
    if cfg.onset_pressure_threshold is None:
        cfg = PreprocessConfig(**{**cfg.to_dict(), "onset_pressure_threshold": estimate_onset_threshold(trials)})
    out = [preprocess_trial(t, cfg) for t in trials]
    return [p for p, _ in out], [lab for _, lab in out], cfg
