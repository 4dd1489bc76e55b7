"""Seeded synthetic pick trials.

Each channel is a piecewise signature (linear ramps, steps, short exponential
transients) around a ground-truth event, plus a slow sinusoidal drift and
white Gaussian noise. Pressure follows the vacuum-low convention: atmospheric
is the high value.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import CHANNEL_NAMES, N_CHANNELS, Outcome, Trial, derive_seed, make_rng

# Nominal span of each channel in its own units; noise and drift scale from it.
DEFAULT_CHANNEL_RANGES = {
    "fx": 4.0, "fy": 4.0, "fz": 4.0,  # N
    "tx": 0.4, "ty": 0.4, "tz": 0.4,  # N m
    "pressure": 70.0,  # kPa
    "flex0": 1.0, "flex1": 1.0, "flex2": 1.0, "flex3": 1.0,  # normalized ADC
    "tof": 100.0,  # mm
}

HARD_MODE_NOISE_SCALE = 3.0


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    sample_rate_hz: float = 50.0
    duration_s: tuple[float, float] = (4.0, 8.0)
    event_fraction: tuple[float, float] = (0.4, 0.8)
    onset_delay_s: tuple[float, float] = (0.2, 0.5)
    noise_std_frac: float = 0.03
    drift_frac: float = 0.02
    pull_slope_n_per_s: tuple[float, float] = (0.3, 0.9)
    fruit_weight_n: tuple[float, float] = (0.8, 2.5)
    pre_failure_s: float = 1.0
    slip_tremor_amplitude: float = 0.15
    tof_step_mm: tuple[float, float] = (60.0, 120.0)
    atmospheric_kpa: float = 101.0
    vacuum_kpa: tuple[float, float] = (35.0, 42.0)
    leak_fraction: tuple[float, float] = (0.35, 0.6)
    leak_onset_fraction: float = 0.3
    hard: bool = False
    channel_ranges: dict = field(default_factory=lambda: dict(DEFAULT_CHANNEL_RANGES))

    def validate(self) -> None:
        if not self.sample_rate_hz > 0:
            raise SimConfigError("sample_rate_hz must be positive")
        for name in ("duration_s", "event_fraction", "onset_delay_s", "pull_slope_n_per_s",
                     "fruit_weight_n", "tof_step_mm", "vacuum_kpa", "leak_fraction"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise SimConfigError(f"{name}: empty range ({lo}, {hi})")
        if self.duration_s[0] < 2.0:
            raise SimConfigError("duration must be at least 2 s")
        if self.onset_delay_s[0] < 0 or self.onset_delay_s[1] > 0.5:
            raise SimConfigError("onset delay must lie in [0, 0.5] s")
        if not (0 < self.event_fraction[0] and self.event_fraction[1] < 1):
            raise SimConfigError("event fraction must lie in (0, 1)")
        if not 0.0 <= self.leak_onset_fraction <= 1.0:
            raise SimConfigError("leak_onset_fraction must lie in [0, 1]")
        if self.noise_std_frac < 0 or self.drift_frac < 0:
            raise SimConfigError("noise and drift fractions must be non-negative")
        if self.pre_failure_s != 1.0:
            raise SimConfigError("pre-failure leak duration is fixed at 1.0 s")
        if self.vacuum_kpa[1] >= self.atmospheric_kpa:
            raise SimConfigError("vacuum level must be below atmospheric")
        if set(self.channel_ranges) != set(CHANNEL_NAMES):
            raise SimConfigError("channel_ranges must name every channel")

    @property
    def noise_scale(self) -> float:
        return HARD_MODE_NOISE_SCALE if self.hard else 1.0

    def noise_std(self, channel: str) -> float:
        return self.noise_std_frac * self.noise_scale * self.channel_ranges[channel]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


def _ramp(t, start, length):
    """0 before ``start``, rising linearly to 1 over ``length`` seconds."""
    return np.clip((t - start) / length, 0.0, 1.0)


def _decay(t, start, tau):
    """1 before ``start`` then exp(-(t-start)/tau)."""
    return np.where(t < start, 1.0, np.exp(-np.clip(t - start, 0.0, None) / tau))


def generate_trial(config: SimConfig, outcome, seed: int, trial_id: str | None = None) -> Trial:
    config.validate()
    outcome = Outcome(outcome)
    rng = make_rng(seed)
    u = rng.uniform
    fs = config.sample_rate_hz

    duration = u(*config.duration_s)
    n = max(int(round(duration * fs)), 2)
    duration = n / fs
    t = np.arange(n) / fs

    t_on = u(*config.onset_delay_s)
    event = u(*config.event_fraction) * duration
    event = float(min(max(event, 1.0, t_on + config.pre_failure_s), duration - 0.5))
    failed = outcome is Outcome.FAILURE
    band_start = event - config.pre_failure_s

    before = t < event
    after = ~before
    # progress through the pre-failure band, 0 outside and before it
    band = np.where(failed & (t >= band_start) & before, (t - band_start) / config.pre_failure_s, 0.0)

    x = np.zeros((n, N_CHANNELS))
    col = {name: i for i, name in enumerate(CHANNEL_NAMES)}

    # --- force/torque: pull tension along a tilted axis, twist torque
    slope = u(*config.pull_slope_n_per_s)
    cz = u(0.5, 0.8)
    azimuth = u(0.0, 2.0 * math.pi)
    lateral = math.sqrt(1.0 - cz * cz)
    ax, ay = lateral * math.cos(azimuth), lateral * math.sin(azimuth)
    tension = slope * np.clip(t - t_on, 0.0, None)
    peak = slope * (event - t_on)
    twist = u(0.02, 0.06) * np.clip(t - t_on, 0.0, None)
    weight = u(*config.fruit_weight_n)
    lever = u(0.03, 0.06)

    if failed:
        # slipping fruit sheds some load; everything collapses at the slip
        pull = tension * (1.0 - 0.25 * band)
        pull_end = peak * 0.75
        pull = np.where(before, pull, pull_end * _decay(t, event, 0.05))
        fx = ax * pull
        fy = ay * pull
        fz = cz * pull
        tz = np.where(before, twist, twist[np.searchsorted(t, event) - 1] * _decay(t, event, 0.05))
        tx = lever * fy
        ty = -lever * fx
    else:
        swing = 0.3 * weight * _decay(t, event, 0.3) * np.sin(2 * math.pi * 3.0 * (t - event))
        swing = np.where(after, swing, 0.0)
        fx = np.where(before, ax * tension, swing * math.cos(azimuth))
        fy = np.where(before, ay * tension, swing * math.sin(azimuth))
        fz = np.where(before, cz * tension, weight + 0.3 * cz * peak)
        tz = np.where(before, twist, 0.0)
        tx = lever * fy + np.where(after, lever * 0.5 * weight, 0.0)
        ty = -lever * fx
    for name, sig in (("fx", fx), ("fy", fy), ("fz", fz), ("tx", tx), ("ty", ty), ("tz", tz)):
        x[:, col[name]] = sig

    # --- vacuum pressure
    atm = config.atmospheric_kpa
    vac = u(*config.vacuum_kpa)
    pressure = atm - (atm - vac) * _ramp(t, t_on, 0.15)
    if failed:
        leak = u(*config.leak_fraction) * (atm - vac)
        # seal breaks with a jump, then leaks as sqrt of band progress
        f0 = config.leak_onset_fraction
        in_band = (t >= band_start) & before
        pressure = pressure + leak * np.where(in_band, f0 + (1.0 - f0) * np.sqrt(band), 0.0)
        at_slip = vac + leak
        pressure = np.where(after, at_slip + (atm - at_slip) * _ramp(t, event, 0.1), pressure)
    x[:, col["pressure"]] = pressure

    # --- flex: cup deformation on contact, tremor and unbending during slip
    tremor_freq = u(2.5, 4.0)
    for j in range(4):
        rest = u(0.05, 0.15)
        depth = u(0.4, 0.8)
        gain = u(0.02, 0.06)
        phase = u(0.0, 2.0 * math.pi)
        contact = 1.0 - _decay(t, t_on, 0.1)
        flex = rest + contact * (depth + gain * tension)
        if failed:
            flex = flex - 0.3 * depth * band
            flex = flex + config.slip_tremor_amplitude * band * np.sin(2 * math.pi * tremor_freq * t + phase)
            level = rest + depth * 0.7 + gain * peak
            flex = np.where(after, rest + (level - rest) * _decay(t, event, 0.1), flex)
        else:
            relaxed = rest + u(0.5, 0.7) * (depth + gain * peak)
            wobble = 0.05 * _decay(t, event, 0.4) * np.sin(2 * math.pi * 2.0 * (t - event) + phase)
            flex = np.where(after, relaxed + wobble, flex)
        x[:, col[f"flex{j}"]] = flex

    # --- time of flight: approach, contact, fruit dropping away on failure
    contact_mm = u(8.0, 15.0)
    approach = u(25.0, 40.0)
    tof = approach + (contact_mm - approach) * _ramp(t, 0.0, max(t_on, 1e-6))
    if failed:
        tof = tof + 5.0 * band
        step = u(*config.tof_step_mm)
        tof = np.where(after, contact_mm + 5.0 + step * _ramp(t, event, 0.1), tof)
    else:
        tof = tof + np.where(after, u(-2.0, 2.0), 0.0)
    x[:, col["tof"]] = tof

    # --- drift and noise, per channel
    for name, i in col.items():
        span = config.channel_ranges[name]
        period = u(3.0, 8.0)
        x[:, i] += config.drift_frac * span * np.sin(2 * math.pi * t / period + u(0.0, 2.0 * math.pi))
        x[:, i] += rng.normal(0.0, config.noise_std(name), size=n)

    return Trial(
        id=trial_id or f"trial_{seed & 0xFFFFFFFF:08x}",
        sample_rate_hz=fs,
        samples=x,
        outcome=outcome,
        event_time_s=event,
        onset_index=0,
    )


def generate_corpus(config: SimConfig, n_success: int, n_fail: int, seed: int) -> list[Trial]:
    """``n_success`` successes followed by ``n_fail`` failures, one derived seed each."""
    if n_success < 0 or n_fail < 0 or n_success + n_fail < 1:
        raise ValueError("need at least one trial")
    outcomes = [Outcome.SUCCESS] * n_success + [Outcome.FAILURE] * n_fail
    return [
        generate_trial(config, outcome, derive_seed(seed, "trial", i), trial_id=f"trial_{i:03d}")
        for i, outcome in enumerate(outcomes)
    ]
