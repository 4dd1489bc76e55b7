"""Trial-level splitting, noise augmentation and sliding-window featurization."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .core import N_CHANNELS, Outcome, PickState, SplitAssignment, Trial, WindowSample, derive_seed, make_rng
from .io import WindowTable
from .preprocess import label_states

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class AugmentConfig:
    alpha: float = 0.05
    copies_failed: int = 7
    copies_success: int = 1

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.copies_failed < 0 or self.copies_success < 0:
            raise ValueError("copy counts must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WindowingConfig:
    window_len: int = 5
    stride: int = 5

    def validate(self) -> None:
        if self.window_len < 1 or self.stride < 1:
            raise ValueError("window_len and stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def split_sizes(n: int, fractions=DEFAULT_FRACTIONS) -> tuple[int, int, int]:
    """``(round(f_train N), round(f_val N), remainder)`` with half-up rounding."""
    f_train, f_val = (Fraction(str(f)) for f in fractions[:2])
    n_train = round_half_up(f_train * n)
    n_val = min(round_half_up(f_val * n), n - n_train)
    return n_train, n_val, n - n_train - n_val


def _apportion(total: int, sizes) -> list[int]:
    """Largest-remainder allocation of ``total`` items proportionally to ``sizes``."""
    n = sum(sizes)
    if n == 0 or total == 0:
        return [0] * len(sizes)
    quotas = [Fraction(total * s, n) for s in sizes]
    alloc = [math.floor(q) for q in quotas]
    order = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def split_trials(trials, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> SplitAssignment:
    """Stratified trial-level split.

    Split sizes follow :func:`split_sizes`; failures are apportioned across
    splits proportionally, then moved so every non-empty split holds at least
    one failure whenever there are enough of them.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("cannot split an empty corpus")
    sizes = split_sizes(len(trials), fractions)
    fails = [t.id for t in trials if t.outcome is Outcome.FAILURE]
    succ = [t.id for t in trials if t.outcome is Outcome.SUCCESS]

    n_fail = _apportion(len(fails), sizes)
    nonempty = [i for i, s in enumerate(sizes) if s > 0]
    if len(fails) >= len(nonempty):
        for i in nonempty:
            if n_fail[i] == 0:
                donor = max(range(3), key=lambda j: (n_fail[j], -j))
                n_fail[donor] -= 1
                n_fail[i] += 1

    rng = make_rng(derive_seed(seed, "split", 0))
    fails = [fails[i] for i in rng.permutation(len(fails))]
    succ = [succ[i] for i in rng.permutation(len(succ))]
    parts = []
    fi = si = 0
    for size, nf in zip(sizes, n_fail):
        ns = size - nf
        parts.append(tuple(sorted(fails[fi:fi + nf] + succ[si:si + ns])))
        fi += nf
        si += ns
    return SplitAssignment(*parts)


def augment_trial(trial: Trial, alpha: float, seed: int, new_id: str | None = None) -> Trial:
    """Add per-channel Gaussian noise whose std is drawn from U(0, alpha * range)."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = trial.samples
    rng = make_rng(seed)
    span = x.max(axis=0) - x.min(axis=0)
    sigma = rng.uniform(0.0, 1.0, size=N_CHANNELS) * alpha * span
    noise = rng.standard_normal(x.shape) * sigma
    # zero-sigma channels stay bit-identical
    out = np.where(sigma > 0, x + noise, x)
    return trial.with_samples(out, id=new_id or trial.id)


def augment_split(train_trials, cfg: AugmentConfig = AugmentConfig(), seed: int = 0) -> list[Trial]:
    """Originals followed by their noisy copies, ids suffixed ``_aug<k>``."""
    cfg.validate()
    out = list(train_trials)
    for trial in train_trials:
        copies = cfg.copies_failed if trial.outcome is Outcome.FAILURE else cfg.copies_success
        for k in range(copies):
            out.append(augment_trial(trial, cfg.alpha, derive_seed(seed, f"aug:{trial.id}", k), f"{trial.id}_aug{k}"))
    return out


def window_count(n_samples: int, window_len: int, stride: int) -> int:
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // stride + 1


def make_windows(trial: Trial, labels=None, cfg: WindowingConfig = WindowingConfig(), channels=None) -> list[WindowSample]:
    """Non-padded windows, each flattened step-major and labeled by its last sample.

    ``channels`` restricts the features to a subset of trial columns.
    """
    cfg.validate()
    if labels is None:
        labels = label_states(trial)
    labels = np.asarray(labels)
    if len(labels) != trial.n_samples:
        raise ValueError("labels must match trial length")
    L, S = cfg.window_len, cfg.stride
    x = trial.samples if channels is None else trial.samples[:, list(channels)]
    n = window_count(trial.n_samples, L, S)
    if n == 0:
        log.warning("trial %s has %d samples, shorter than the window length %d", trial.id, trial.n_samples, L)
        return []
    fs = trial.sample_rate_hz
    out = []
    for k in range(n):
        start = k * S
        last = start + L - 1
        out.append(WindowSample(
            features=x[start:start + L].reshape(-1).copy(),
            label=PickState(int(labels[last])),
            trial_id=trial.id,
            end_time_s=last / fs,
        ))
    return out


def build_window_table(trials, cfg: WindowingConfig = WindowingConfig(), channels=None, labels=None) -> WindowTable:
    n_ch = N_CHANNELS if channels is None else len(channels)
    windows = []
    for i, trial in enumerate(trials):
        windows.extend(make_windows(trial, None if labels is None else labels[i], cfg, channels))
    return WindowTable.from_samples(windows, n_features=cfg.window_len * n_ch, channels=channels)
