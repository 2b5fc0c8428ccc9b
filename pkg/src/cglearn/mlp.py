"""ReLU multilayer perceptron with hand-written backpropagation.

CGLearn for the MLP gates only the first weight matrix: row ``j`` of that
matrix holds every connection from input feature ``j`` into the first hidden
layer, so its gradient norm per environment is the feature's agreement signal.
Deeper layers and all biases take ordinary mean-gradient steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .consistency import DEFAULT_THRESHOLDS, ConsistencyStats
from .datasets import EnvironmentSet, TabularDataset, Task
from .lingrad import TrainingDivergence, TrainTrace

LOSSES = ("mse", "cross_entropy")


@dataclass(frozen=True)
class MlpModel:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    head: str = "linear"  # "linear" (regression) or "softmax"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match {w.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input width does not match layer {i - 1} output")
        if self.head not in ("linear", "softmax"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.d] + [w.shape[1] for w in self.weights]

    @property
    def first_layer(self) -> np.ndarray:
        return self.weights[0]

    def params(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return forward(self, features)

    def to_json(self) -> str:
        return json.dumps({
            "sizes": self.sizes,
            "head": self.head,
            "hidden_activation": "relu",
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        })

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        doc = json.loads(text)
        sizes = doc["sizes"]
        weights = tuple(np.asarray(w, dtype=float).reshape(sizes[i], sizes[i + 1])
                        for i, w in enumerate(doc["weights"]))
        biases = tuple(np.asarray(b, dtype=float) for b in doc["biases"])
        return cls(weights, biases, doc["head"])

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class MlpTrainConfig:
    hidden_sizes: tuple[int, ...] = (64, 32)
    learning_rate: float = 1e-2
    steps: int = 2000
    threshold: float | None = None
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    loss: str = "mse"
    seed: int = 0
    trace_every: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not self.learning_rate >= 0 or self.steps < 0:
            raise ValueError("learning_rate and steps must be nonnegative")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))


def init_mlp(d: int, hidden_sizes: Sequence[int], n_out: int = 1, head: str = "linear",
             seed: int = 0) -> MlpModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng(seed)
    sizes = [d, *hidden_sizes, n_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpModel(tuple(weights), tuple(biases), head)


def model_for(envs: EnvironmentSet, config: MlpTrainConfig) -> MlpModel:
    if envs.task is Task.CLASSIFICATION:
        return init_mlp(envs.d, config.hidden_sizes, envs.n_classes, "softmax", config.seed)
    return init_mlp(envs.d, config.hidden_sizes, 1, "linear", config.seed)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def _forward_cache(model: MlpModel, x: np.ndarray):
    acts, pre = [x], []
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Predictions: a length-n vector for the linear head, (n, k) class
    probabilities for the softmax head."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ValueError(f"expected features of width {model.d}, got shape {x.shape}")
    out = _forward_cache(model, x)[0][-1]
    return _softmax(out) if model.head == "softmax" else out[:, 0]


def loss_value(model: MlpModel, dataset: TabularDataset, loss: str = "mse") -> float:
    pred = forward(model, dataset.features)
    if loss == "mse":
        return float(np.mean((pred - dataset.target) ** 2))
    p = pred[np.arange(dataset.n), dataset.target]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def env_backward(model: MlpModel, env: TabularDataset, loss: str = "mse"):
    """Full-batch gradients of the mean loss on one environment.

    Returns ``(weight_grads, bias_grads, loss_value)``, the gradients shaped
    like the model's parameters.
    """
    if env.n == 0:
        raise ValueError("environment is empty")
    if (loss == "cross_entropy") != (model.head == "softmax"):
        raise ValueError(f"loss {loss!r} does not match a {model.head} head")
    acts, pre = _forward_cache(model, env.features)
    n = env.n
    out = acts[-1]
    if loss == "mse":
        resid = out[:, 0] - env.target
        value = float(np.mean(resid ** 2))
        delta = (2.0 / n) * resid[:, None]
    else:
        p = _softmax(out)
        rows = np.arange(n)
        value = float(-np.mean(np.log(np.maximum(p[rows, env.target], 1e-300))))
        delta = p
        delta[rows, env.target] -= 1.0
        delta /= n
    n_layers = len(model.weights)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return w_grads, b_grads, value


def feature_gradient_norms(first_layer_grads: Sequence[np.ndarray]) -> np.ndarray:
    """(m, d) matrix: L2 norm of row j of environment i's first-layer gradient."""
    grads = np.asarray([np.asarray(g, dtype=float) for g in first_layer_grads])
    if grads.ndim != 3:
        raise ValueError("expected a list of (d, h1) first-layer gradient matrices")
    return np.sqrt((grads ** 2).sum(axis=2))


def _train(envs: EnvironmentSet, config: MlpTrainConfig, threshold: float | None,
           init: MlpModel | None) -> tuple[MlpModel, TrainTrace]:
    model = init if init is not None else model_for(envs, config)
    if model.d != envs.d:
        raise ValueError("initial model does not match the feature count")
    ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    m = len(envs)
    lr = config.learning_rate
    trace = TrainTrace(threshold=threshold)
    for step in range(config.steps):
        current = MlpModel(tuple(ws), tuple(bs), model.head)
        # overflow surfaces as a non-finite loss and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            per_env = [env_backward(current, env, config.loss) for env in envs]
        if not all(np.isfinite(v) for _, _, v in per_env):
            raise TrainingDivergence(step)
        w_mean = [sum(g[0][i] for g in per_env) / m for i in range(len(ws))]
        b_mean = [sum(g[1][i] for g in per_env) / m for i in range(len(bs))]
        if threshold is not None:
            norms = feature_gradient_norms([g[0][0] for g in per_env])
            stats = ConsistencyStats.from_samples(norms, threshold)
            w_mean[0] = w_mean[0] * stats.mask[:, None]
            if config.trace_every and step % config.trace_every == 0:
                trace.record(step, stats)
        for i in range(len(ws)):
            ws[i] = ws[i] - lr * w_mean[i]
            bs[i] = bs[i] - lr * b_mean[i]
    final = MlpModel(tuple(ws), tuple(bs), model.head)
    losses = np.array([loss_value(final, env, config.loss) for env in envs])
    if not np.all(np.isfinite(losses)) or not all(np.all(np.isfinite(p)) for p in final.params()):
        raise TrainingDivergence(config.steps)
    trace.final_losses = losses
    return final, trace


def train_mlp_erm(envs: EnvironmentSet, config: MlpTrainConfig,
                  init: MlpModel | None = None) -> MlpModel:
    return _train(envs, config, None, init)[0]


def train_mlp_cglearn(envs: EnvironmentSet, config: MlpTrainConfig, threshold: float | None = None,
                      init: MlpModel | None = None) -> tuple[MlpModel, TrainTrace]:
    threshold = config.threshold if threshold is None else threshold
    if threshold is None:
        raise ValueError("train_mlp_cglearn needs a threshold")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if len(envs) < 2:
        raise ValueError("CGLearn needs at least two environments")
    return _train(envs, config, float(threshold), init)


def select_mlp_threshold(train_envs: EnvironmentSet, validation_env: TabularDataset,
                         config: MlpTrainConfig) -> tuple[float, MlpModel]:
    """Candidate with the lowest validation loss; ties go to the smaller threshold."""
    best = None
    for t in sorted(config.thresholds):
        model, _ = train_mlp_cglearn(train_envs, config, threshold=t)
        score = loss_value(model, validation_env, config.loss)
        if best is None or score < best[0]:
            best = (score, t, model)
    if best is None:
        raise ValueError("no candidate thresholds")
    return best[1], best[2]
