"""Random forest of bagged CART trees grown on Gini impurity."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import N_CHANNELS, N_STATES, SENSOR_GROUPS, CHANNELS, PickState, derive_seed, make_rng

FORMAT = "pickstate-forest"
VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: int | None = None  # None: floor(sqrt(n_features))
    bootstrap: bool = True
    n_jobs: int = 1

    def resolved_features(self, n_features: int) -> int:
        k = self.features_per_split or int(math.isqrt(n_features))
        if not 1 <= k <= n_features:
            raise ValueError(f"features_per_split={k} outside [1, {n_features}]")
        return k

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("n_jobs")  # scheduling only; never changes the model
        return d


@dataclass(eq=False)
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, N_STATES) class counts of the samples reaching each node
    importance: np.ndarray  # weighted impurity decrease per feature

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, nd = rows[active], node[active]
            go_left = X[r, f[active]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])

    def predict_proba(self, X) -> np.ndarray:
        c = self.counts[self.apply(X)].astype(np.float64)
        return c / c.sum(axis=1, keepdims=True)


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def best_split(Xs, y, counts):
    """Exact best Gini split over the columns of ``Xs``.

    Returns ``(gain, column, threshold)`` or ``None`` when every column is
    constant. Ties go to the lowest column, then the lowest threshold.
    """
    n, m = Xs.shape
    if n < 2:
        return None
    order = np.argsort(Xs, axis=0, kind="stable")
    sv = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]
    onehot = ys[..., None] == np.arange(N_STATES)
    left = np.cumsum(onehot, axis=0, dtype=np.float64)[:-1]
    nl = np.arange(1, n, dtype=np.float64)[:, None, None]
    right = counts.astype(np.float64) - left
    nr = n - nl
    child = (nl[..., 0] - np.sum(left * left, axis=2) / nl[..., 0]) + (nr[..., 0] - np.sum(right * right, axis=2) / nr[..., 0])
    gain = gini(counts) - child / n
    valid = sv[1:] > sv[:-1]
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()
    j = int(np.argmax(flat))
    if not np.isfinite(flat[j]):
        return None
    col, pos = divmod(j, n - 1)
    lo, hi = sv[pos, col], sv[pos + 1, col]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(flat[j]), col, float(thr)


def grow_tree(X, y, cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    n_total, p = X.shape
    k = cfg.resolved_features(p)
    feature, threshold, left, right, counts = [], [], [], [], []
    importance = np.zeros(p)

    def new_node(c):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(c)
        return len(feature) - 1

    root_counts = np.bincount(y, minlength=N_STATES)
    stack = [(new_node(root_counts), np.arange(n_total), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        n = len(idx)
        if n < cfg.min_samples_split or c.max() == n or (cfg.max_depth is not None and depth >= cfg.max_depth):
            continue
        yn = y[idx]
        feats = np.sort(rng.choice(p, size=k, replace=False))
        found = best_split(X[np.ix_(idx, feats)], yn, c)
        if found is None and k < p:
            # every sampled feature was constant here: widen to the rest
            feats = np.setdiff1d(np.arange(p), feats)
            found = best_split(X[np.ix_(idx, feats)], yn, c)
        if found is None:
            continue
        gain, col, thr = found
        f = int(feats[col])
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        importance[f] += n / n_total * gain
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(np.bincount(y[li], minlength=N_STATES))
        right[node] = new_node(np.bincount(y[ri], minlength=N_STATES))
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.int64).reshape(-1, N_STATES),
        importance=importance,
    )


@dataclass(eq=False)
class ForestModel:
    trees: list
    feature_count: int
    seed: int
    config: ForestConfig = field(default_factory=ForestConfig)
    channels: tuple | None = None  # trial columns the features were built from
    kind: str = "rf"

    def predict_proba(self, X) -> np.ndarray:
        X = _check_features(X, self.feature_count)
        total = np.zeros((len(X), N_STATES))
        for tree in self.trees:
            total += tree.predict_proba(X)
        return total / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "feature_count": self.feature_count,
            "classes": [s.label for s in PickState],
            "seed": self.seed,
            "config": self.config.to_dict(),
            "channels": None if self.channels is None else list(self.channels),
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "counts": t.counts.tolist(),
                    "importance": t.importance.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError("not a pickstate forest model (v1)")
        trees = [
            Tree(
                feature=np.array(t["feature"], dtype=np.int64),
                threshold=np.array(t["threshold"], dtype=np.float64),
                left=np.array(t["left"], dtype=np.int64),
                right=np.array(t["right"], dtype=np.int64),
                counts=np.array(t["counts"], dtype=np.int64).reshape(-1, N_STATES),
                importance=np.array(t["importance"], dtype=np.float64),
            )
            for t in d["trees"]
        ]
        channels = d.get("channels")
        return cls(trees, int(d["feature_count"]), int(d["seed"]), ForestConfig(**d["config"]),
                   None if channels is None else tuple(channels))


def _check_features(X, n_features) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def _as_xy(windows):
    if hasattr(windows, "X"):
        return windows.X, windows.y, getattr(windows, "channels", None)
    windows = list(windows)
    if not windows:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64), None
    return np.vstack([w.features for w in windows]), np.array([int(w.label) for w in windows]), None


def train_forest(windows, cfg: ForestConfig = ForestConfig(), seed: int = 0) -> ForestModel:
    """Fit ``cfg.n_trees`` trees, tree ``i`` seeded by ``derive_seed(seed, "tree", i)``."""
    cfg.validate()
    X, y, channels = _as_xy(windows)
    if len(y) == 0:
        raise ValueError("empty training set")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    cfg.resolved_features(X.shape[1])

    def fit_one(i):
        rng = make_rng(derive_seed(seed, "tree", i))
        if cfg.bootstrap:
            rows = rng.integers(0, len(y), size=len(y))
            return grow_tree(X[rows], y[rows], cfg, rng)
        return grow_tree(X, y, cfg, rng)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            trees = list(pool.map(fit_one, range(cfg.n_trees)))
    else:
        trees = [fit_one(i) for i in range(cfg.n_trees)]
    return ForestModel(trees, X.shape[1], int(seed), cfg, channels)


def predict_forest(model: ForestModel, features) -> tuple[PickState, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError("predict_forest takes one feature vector")
    proba = model.predict_proba(features)[0]
    return PickState(int(np.argmax(proba))), proba


def impurity_importance(model: ForestModel) -> np.ndarray:
    """Mean over trees of each tree's normalized impurity decrease, summing to 1.

    A forest with no splits at all returns zeros.
    """
    acc = np.zeros(model.feature_count)
    for tree in model.trees:
        total = tree.importance.sum()
        if total > 0:
            acc += tree.importance / total
    total = acc.sum()
    return acc / total if total > 0 else acc


def sensor_group_importance(per_feature, channels=None) -> np.ndarray:
    """Sum a step-major per-feature vector into (force, pressure, flex, tof)."""
    channels = tuple(range(N_CHANNELS)) if channels is None else tuple(channels)
    per_feature = np.asarray(per_feature, dtype=np.float64)
    n_ch = len(channels)
    if per_feature.ndim != 1 or n_ch == 0 or per_feature.size % n_ch != 0:
        raise ValueError(f"per-feature vector of length {per_feature.size} does not tile {n_ch} channels")
    per_channel = per_feature.reshape(-1, n_ch).sum(axis=0)
    out = np.zeros(len(SENSOR_GROUPS))
    for value, c in zip(per_channel, channels):
        out[SENSOR_GROUPS.index(CHANNELS[c].sensor_group)] += value
    return out
