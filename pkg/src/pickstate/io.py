"""On-disk formats: trial JSON documents, corpus manifests and window tables."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .core import SENSOR_GROUPS, Outcome, PickState, Trial, WindowSample, group_columns

MANIFEST_NAME = "manifest.json"


def trial_to_dict(trial: Trial, labels=None) -> dict:
    channels = {}
    for group in SENSOR_GROUPS:
        block = trial.samples[:, list(group_columns(group))]
        if block.shape[1] == 1:
            channels[group.value] = block[:, 0].tolist()
        else:
            channels[group.value] = block.tolist()
    doc = {
        "id": trial.id,
        "sample_rate_hz": float(trial.sample_rate_hz),
        "outcome": trial.outcome.value,
        "event_time_s": float(trial.event_time_s),
        "onset_index": int(trial.onset_index),
        "channels": channels,
    }
    if labels is not None:
        doc["labels"] = [int(x) for x in labels]
    return doc


def trial_from_dict(doc: dict) -> tuple[Trial, np.ndarray | None]:
    cols = []
    for group in SENSOR_GROUPS:
        block = np.asarray(doc["channels"][group.value], dtype=np.float64)
        if block.ndim == 1:
            block = block[:, None]
        if block.shape[1] != len(group_columns(group)):
            raise ValueError(f"trial {doc.get('id')}: wrong channel count for {group.value}")
        cols.append(block)
    lengths = {c.shape[0] for c in cols}
    if len(lengths) != 1:
        raise ValueError(f"trial {doc.get('id')}: channel lengths differ {sorted(lengths)}")
    trial = Trial(
        id=str(doc["id"]),
        sample_rate_hz=float(doc["sample_rate_hz"]),
        samples=np.hstack(cols),
        outcome=Outcome(doc["outcome"]),
        event_time_s=float(doc["event_time_s"]),
        onset_index=int(doc.get("onset_index", 0)),
    )
    labels = doc.get("labels")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    return trial, labels


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_trial(path, trial: Trial, labels=None) -> None:
    write_json(path, trial_to_dict(trial, labels))


def read_trial(path) -> tuple[Trial, np.ndarray | None]:
    return trial_from_dict(read_json(path))


def write_corpus(directory, trials, labels=None, meta: dict | None = None, stamp: dict | None = None) -> Path:
    """Write one JSON per trial plus ``manifest.json`` listing ids in order.

    ``stamp`` keys (config digest, seed) are copied into every trial document.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, trial in enumerate(trials):
        doc = trial_to_dict(trial, None if labels is None else labels[i])
        doc.update(stamp or {})
        write_json(directory / f"{trial.id}.json", doc)
    manifest = {"ids": [t.id for t in trials]}
    manifest.update(meta or {})
    write_json(directory / MANIFEST_NAME, manifest)
    return directory


def read_corpus(directory) -> tuple[list[Trial], list, dict]:
    directory = Path(directory)
    manifest = read_json(directory / MANIFEST_NAME)
    trials, labels = [], []
    for trial_id in manifest["ids"]:
        trial, lab = read_trial(directory / f"{trial_id}.json")
        trials.append(trial)
        labels.append(lab)
    return trials, labels, manifest


class WindowTable:
    """Column-oriented set of windows: feature matrix plus per-row metadata."""

    def __init__(self, X, y, trial_ids, end_times, channels=None):
        self.X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
        self.y = np.asarray(y, dtype=np.int64)
        self.trial_ids = np.asarray(trial_ids, dtype=object)
        self.end_times = np.asarray(end_times, dtype=np.float64)
        self.channels = None if channels is None else tuple(channels)

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_samples(cls, windows, n_features=None, channels=None) -> "WindowTable":
        windows = list(windows)
        if windows:
            X = np.vstack([w.features for w in windows])
        else:
            X = np.zeros((0, n_features or 0))
        return cls(
            X,
            [int(w.label) for w in windows],
            [w.trial_id for w in windows],
            [w.end_time_s for w in windows],
            channels=channels,
        )

    def samples(self) -> list[WindowSample]:
        return [
            WindowSample(self.X[i], PickState(int(self.y[i])), str(self.trial_ids[i]), float(self.end_times[i]))
            for i in range(len(self))
        ]

    def select(self, mask) -> "WindowTable":
        mask = np.asarray(mask)
        return WindowTable(self.X[mask], self.y[mask], self.trial_ids[mask], self.end_times[mask], self.channels)

    def for_trials(self, ids) -> "WindowTable":
        ids = set(ids)
        return self.select(np.array([t in ids for t in self.trial_ids], dtype=bool))

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trial_id", "end_time_s", "label_code"] + [f"f{i}" for i in range(self.n_features)])
            for i in range(len(self)):
                writer.writerow(
                    [self.trial_ids[i], repr(float(self.end_times[i])), int(self.y[i])]
                    + [repr(v) for v in self.X[i].tolist()]
                )

    @classmethod
    def from_csv(cls, path) -> "WindowTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        n_feat = len(header) - 3
        ids = [r[0] for r in rows]
        ends = [float(r[1]) for r in rows]
        labels = [int(r[2]) for r in rows]
        X = np.array([[float(v) for v in r[3:]] for r in rows], dtype=np.float64).reshape(len(rows), n_feat)
        return cls(X, labels, ids, ends)


def default_out_root() -> Path:
    return Path(os.environ.get("PICKSTATE_OUT", "pickstate_out"))
