"""Domain types, channel taxonomy and seeding shared by every stage."""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field, replace

import numpy as np


class SensorGroup(enum.Enum):
    FORCE = "force"
    PRESSURE = "pressure"
    FLEX = "flex"
    TOF = "tof"


class PickState(enum.IntEnum):
    PICKING = 0
    PRE_FAILURE = 1
    PICKED = 2
    FAILED_PICK = 3

    @property
    def label(self) -> str:
        return _STATE_LABELS[self]


_STATE_LABELS = {
    PickState.PICKING: "Picking",
    PickState.PRE_FAILURE: "PreFailure",
    PickState.PICKED: "Picked",
    PickState.FAILED_PICK: "FailedPick",
}

N_STATES = len(PickState)


class Outcome(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class ChannelId:
    sensor_group: SensorGroup
    index_within_group: int

    @property
    def name(self) -> str:
        names = GROUP_CHANNEL_NAMES[self.sensor_group]
        return names[self.index_within_group]


GROUP_CHANNEL_NAMES = {
    SensorGroup.FORCE: ("fx", "fy", "fz", "tx", "ty", "tz"),
    SensorGroup.PRESSURE: ("pressure",),
    SensorGroup.FLEX: ("flex0", "flex1", "flex2", "flex3"),
    SensorGroup.TOF: ("tof",),
}

# Fixed column order of every trial array; the single source of channel layout.
SENSOR_GROUPS = (SensorGroup.FORCE, SensorGroup.PRESSURE, SensorGroup.FLEX, SensorGroup.TOF)
CHANNELS = tuple(
    ChannelId(group, i)
    for group in SENSOR_GROUPS
    for i in range(len(GROUP_CHANNEL_NAMES[group]))
)
N_CHANNELS = len(CHANNELS)
CHANNEL_NAMES = tuple(ch.name for ch in CHANNELS)


def group_columns(group: SensorGroup) -> tuple[int, ...]:
    """Column indices (into the trial array) of one sensor group."""
    return tuple(i for i, ch in enumerate(CHANNELS) if ch.sensor_group is group)


def channels_for_groups(groups) -> tuple[int, ...]:
    """Channel columns of a set of groups, kept in canonical order."""
    wanted = {SensorGroup(g) for g in groups}
    return tuple(i for i, ch in enumerate(CHANNELS) if ch.sensor_group in wanted)


def parse_groups(text: str) -> tuple[SensorGroup, ...]:
    """Parse ``"force+flex"`` or ``"all"`` into sensor groups."""
    text = text.strip().lower()
    if text == "all":
        return SENSOR_GROUPS
    parts = [p for p in text.replace(",", "+").split("+") if p]
    groups = {SensorGroup(p) for p in parts}
    return tuple(g for g in SENSOR_GROUPS if g in groups)


MASK64 = (1 << 64) - 1


def derive_seed(master: int, purpose_tag: str, index: int = 0) -> int:
    """Mix a master seed with a purpose tag and index into a new 64-bit seed.

    BLAKE2b over a length-prefixed encoding, so ``("ab", 1)`` and ``("a", 1)``
    never collide by concatenation.
    """
    tag = purpose_tag.encode("utf-8")
    payload = struct.pack("<QQ", int(master) & MASK64, len(tag)) + tag
    payload += struct.pack("<q", int(index))
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


@dataclass(frozen=True, eq=False)
class Trial:
    """One pick attempt.

    ``samples`` has shape ``(T, N_CHANNELS)`` in the canonical channel order
    and is made read-only on construction.
    """

    id: str
    sample_rate_hz: float
    samples: np.ndarray
    outcome: Outcome
    event_time_s: float
    onset_index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != N_CHANNELS:
            raise ValueError(f"trial {self.id}: samples must be (T, {N_CHANNELS}), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError(f"trial {self.id}: empty series")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"trial {self.id}: sample rate must be positive")
        if not 0.0 <= self.event_time_s <= arr.shape[0] / self.sample_rate_hz + 1e-9:
            raise ValueError(f"trial {self.id}: event_time_s {self.event_time_s} outside series")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "outcome", Outcome(self.outcome))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate_hz

    def channel(self, name: str) -> np.ndarray:
        return self.samples[:, CHANNEL_NAMES.index(name)]

    def group(self, group: SensorGroup) -> np.ndarray:
        return self.samples[:, list(group_columns(group))]

    def with_samples(self, samples, **changes) -> "Trial":
        return replace(self, samples=samples, **changes)

    def __eq__(self, other):
        if not isinstance(other, Trial):
            return NotImplemented
        return (
            self.id == other.id
            and self.sample_rate_hz == other.sample_rate_hz
            and self.outcome is other.outcome
            and self.event_time_s == other.event_time_s
            and self.onset_index == other.onset_index
            and self.samples.shape == other.samples.shape
            and bool(np.array_equal(self.samples, other.samples))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class WindowSample:
    features: np.ndarray
    label: PickState
    trial_id: str
    end_time_s: float


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        tr, va, te = set(self.train), set(self.val), set(self.test)
        if tr & va or tr & te or va & te:
            raise ValueError("split sets overlap")

    def as_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))
