"""Fully connected ReLU network trained with mini-batch Adam and early stopping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import N_STATES, PickState, derive_seed, make_rng

FORMAT = "pickstate-mlp"
VERSION = 1
PROB_FLOOR = 1e-12
STD_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple[int, ...] = (150, 50)
    activation: str = "relu"
    max_epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 10
    early_stop_metric: str = "val_accuracy"  # or "val_loss"

    def validate(self) -> None:
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer sizes must be positive")
        if self.activation != "relu":
            raise ValueError("only relu activation is supported")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience and batch_size must be >= 1")
        if self.early_stop_metric not in ("val_accuracy", "val_loss"):
            raise ValueError(f"unknown early-stop metric {self.early_stop_metric!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(**{**d, "hidden": tuple(d["hidden"])})


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    @classmethod
    def identity(cls, n_features: int) -> "Standardizer":
        return cls(np.zeros(n_features), np.ones(n_features))


def fit_standardizer(train) -> Standardizer:
    X = _features(train)
    if len(X) < 2:
        raise ValueError("need at least 2 training windows to fit a standardizer")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    flat = std < STD_FLOOR
    # pin constant columns to their value so they map to exact zeros
    mean = np.where(flat, X[0], mean)
    std = np.where(flat, 1.0, std)
    return Standardizer(mean, std)


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(weights, biases, X):
    """Return the list of layer activations, input first, logits last."""
    acts = [X]
    h = X
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        h = z if i == len(weights) - 1 else relu(z)
        acts.append(h)
    return acts


def cross_entropy(logits, y) -> float:
    p = softmax(logits)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], PROB_FLOOR))))


def loss_and_grads(weights, biases, X, y):
    """Mean softmax cross-entropy and its gradients w.r.t. every weight and bias."""
    acts = forward(weights, biases, X)
    logits = acts[-1]
    n = len(y)
    p = softmax(logits)
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), y], PROB_FLOOR))))
    delta = p
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw, gb = [None] * len(weights), [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


def init_params(layer_sizes, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


@dataclass(eq=False)
class MlpModel:
    weights: list
    biases: list
    standardizer: Standardizer
    history: dict = field(default_factory=dict)
    seed: int = 0
    config: MlpConfig = field(default_factory=MlpConfig)
    channels: tuple | None = None
    kind: str = "mlp"

    @property
    def feature_count(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.feature_count:
            raise ValueError(f"expected {self.feature_count} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input features")
        return forward(self.weights, self.biases, self.standardizer.transform(X))[-1]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "channels": None if self.channels is None else list(self.channels),
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
            "standardizer": {"mean": self.standardizer.mean.tolist(), "std": self.standardizer.std.tolist()},
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError("not a pickstate mlp model (v1)")
        weights = [np.array(l["weights"], dtype=np.float64).reshape(l["shape"]) for l in d["layers"]]
        biases = [np.array(l["bias"], dtype=np.float64) for l in d["layers"]]
        std = Standardizer(np.array(d["standardizer"]["mean"]), np.array(d["standardizer"]["std"]))
        channels = d.get("channels")
        return cls(weights, biases, std, d.get("history", {}), int(d["seed"]), MlpConfig.from_dict(d["config"]),
                   None if channels is None else tuple(channels))


def make_network(layer_sizes, seed: int) -> MlpModel:
    """Freshly initialized network with an identity standardizer."""
    rng = make_rng(derive_seed(seed, "mlp-init", 0))
    weights, biases = init_params(list(layer_sizes), rng)
    return MlpModel(weights, biases, Standardizer.identity(layer_sizes[0]), seed=int(seed),
                    config=MlpConfig(hidden=tuple(layer_sizes[1:-1])))


def _features(windows):
    if hasattr(windows, "X"):
        return np.asarray(windows.X, dtype=np.float64)
    return np.vstack([w.features for w in windows]).astype(np.float64)


def _labels(windows):
    if hasattr(windows, "y"):
        return np.asarray(windows.y, dtype=np.int64)
    return np.array([int(w.label) for w in windows], dtype=np.int64)


def train_mlp(train, val, cfg: MlpConfig = MlpConfig(), seed: int = 0, standardizer: Standardizer | None = None) -> MlpModel:
    """Fit on ``train``; keep the parameters of the best validation epoch.

    ``train`` and ``val`` hold raw features; the standardizer is fit on
    ``train`` unless one is supplied.
    """
    cfg.validate()
    Xtr_raw, ytr = _features(train), _labels(train)
    Xva_raw, yva = _features(val), _labels(val)
    if len(yva) == 0:
        raise ValueError("validation set is empty")
    standardizer = standardizer or fit_standardizer(train)
    Xtr, Xva = standardizer.transform(Xtr_raw), standardizer.transform(Xva_raw)

    sizes = [Xtr.shape[1], *cfg.hidden, N_STATES]
    weights, biases = init_params(sizes, make_rng(derive_seed(seed, "mlp-init", 0)))
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0

    history = {"train_loss": [], "val_accuracy": [], "val_loss": []}
    best_score, best_epoch, best = None, -1, None
    stale = 0
    n = len(ytr)
    for epoch in range(cfg.max_epochs):
        order = make_rng(derive_seed(seed, "epoch", epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = loss_and_grads(weights, biases, Xtr[idx], ytr[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}")
            total += loss * len(idx)
            step += 1
            lr = cfg.learning_rate * np.sqrt(1 - cfg.beta2 ** step) / (1 - cfg.beta1 ** step)
            for p, g, mi, vi in zip(params, gw + gb, m, v):
                mi *= cfg.beta1
                mi += (1 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1 - cfg.beta2) * (g * g)
                p -= lr * mi / (np.sqrt(vi) + cfg.epsilon)
        logits = forward(weights, biases, Xva)[-1]
        val_acc = float(np.mean(np.argmax(logits, axis=1) == yva))
        val_loss = cross_entropy(logits, yva)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss became {val_loss} at epoch {epoch}")
        history["train_loss"].append(total / n)
        history["val_accuracy"].append(val_acc)
        history["val_loss"].append(val_loss)

        score = val_acc if cfg.early_stop_metric == "val_accuracy" else -val_loss
        if best_score is None or score > best_score:
            best_score, best_epoch, stale = score, epoch, 0
            best = [p.copy() for p in params]
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    k = len(weights)
    history["best_epoch"] = best_epoch
    history["epochs_run"] = len(history["train_loss"])
    return MlpModel(best[:k], best[k:], standardizer, history, int(seed), cfg, getattr(train, "channels", None))


def predict_mlp(model: MlpModel, features) -> tuple[PickState, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError("predict_mlp takes one feature vector")
    proba = model.predict_proba(features)[0]
    return PickState(int(np.argmax(proba))), proba


def gradient_check(model: MlpModel, X, y, step: float = 1e-5, max_per_param: int = 50, seed: int = 0,
                   floor: float = 1e-8) -> float:
    """Max relative error between backprop and central-difference gradients.

    Up to ``max_per_param`` entries of each weight and bias array are checked.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``. Entries whose
    perturbation moves any hidden unit across the ReLU kink are skipped,
    since the loss is not differentiable there and the central difference
    is meaningless.
    """
    X = model.standardizer.transform(X)
    y = np.asarray(y, dtype=np.int64)
    weights = [W.copy() for W in model.weights]
    biases = [b.copy() for b in model.biases]
    _, gw, gb = loss_and_grads(weights, biases, X, y)

    def evaluate():
        acts = forward(weights, biases, X)
        pattern = [a > 0 for a in acts[1:-1]]
        return cross_entropy(acts[-1], y), pattern

    _, center = evaluate()
    rng = make_rng(derive_seed(seed, "gradcheck", 0))
    worst = 0.0
    for params, grads in ((weights, gw), (biases, gb)):
        for p, g in zip(params, grads):
            flat, gflat = p.reshape(-1), g.reshape(-1)
            picks = rng.choice(flat.size, size=min(max_per_param, flat.size), replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + step
                up, up_pattern = evaluate()
                flat[i] = orig - step
                down, down_pattern = evaluate()
                flat[i] = orig
                crossed = any(not (np.array_equal(c, u) and np.array_equal(c, d))
                              for c, u, d in zip(center, up_pattern, down_pattern))
                if crossed:
                    continue
                numeric = (up - down) / (2 * step)
                err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), floor)
                worst = max(worst, err)
    return worst
