"""Pick-state classification for a sensorized suction gripper, on synthetic data."""

from .core import (
    CHANNELS,
    N_CHANNELS,
    SENSOR_GROUPS,
    ChannelId,
    Outcome,
    PickState,
    SensorGroup,
    SplitAssignment,
    Trial,
    WindowSample,
    derive_seed,
)

__all__ = [
    "CHANNELS",
    "N_CHANNELS",
    "SENSOR_GROUPS",
    "ChannelId",
    "Outcome",
    "PickState",
    "SensorGroup",
    "SplitAssignment",
    "Trial",
    "WindowSample",
    "derive_seed",
]
