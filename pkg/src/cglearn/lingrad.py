"""Linear regression trained by full-batch gradient descent across environments.

Three trainers share one gradient routine: plain ERM (mean of per-environment
gradients), CGLearn (the same mean, gated per feature by gradient agreement)
and an IRMv1-style penalised baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .consistency import DEFAULT_THRESHOLDS, EPS, ConsistencyStats
from .datasets import EnvironmentSet, TabularDataset, Task


class TrainingDivergence(RuntimeError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, d: int) -> "LinearModel":
        return cls(np.zeros(d), 0.0)

    @classmethod
    def from_params(cls, theta: np.ndarray) -> "LinearModel":
        return cls(np.array(theta[:-1], dtype=float), float(theta[-1]))

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.weights + self.bias


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    steps: int = 5000
    threshold: float | None = None
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    loss: str = "mse"
    seed: int = 0
    trace_every: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.loss != "mse":
            raise ValueError("linear trainers support only the mse loss")
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))


@dataclass
class TrainTrace:
    steps: list[int] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    ratios: list[np.ndarray] = field(default_factory=list)
    final_losses: np.ndarray | None = None
    threshold: float | None = None

    def record(self, step: int, stats: ConsistencyStats):
        self.steps.append(step)
        self.masks.append(stats.mask.copy())
        self.ratios.append(stats.ratio.copy())


class _Moments:
    """Per-environment second moments of [X, 1] and y.

    The full-batch MSE gradient of environment i is ``2 (G_i theta - h_i)``,
    so each step costs O(m d^2) regardless of the row count.
    """

    def __init__(self, envs: EnvironmentSet):
        if envs.task is not Task.REGRESSION:
            raise ValueError("linear trainers need a regression task")
        grams, cross, yy = [], [], []
        for i, env in enumerate(envs):
            if env.n == 0:
                raise ValueError(f"environment {i} is empty")
            z = np.hstack([env.features, np.ones((env.n, 1))])
            grams.append(z.T @ z / env.n)
            cross.append(z.T @ env.target / env.n)
            yy.append(env.target @ env.target / env.n)
        self.gram = np.stack(grams)
        self.cross = np.stack(cross)
        self.yy = np.array(yy)

    def gradients(self, theta: np.ndarray) -> np.ndarray:
        return 2.0 * (self.gram @ theta - self.cross)

    def losses(self, theta: np.ndarray) -> np.ndarray:
        return np.einsum("i,kij,j->k", theta, self.gram, theta) - 2.0 * self.cross @ theta + self.yy


def env_losses(model: LinearModel, envs: EnvironmentSet) -> np.ndarray:
    return np.array([np.mean((model.predict(env.features) - env.target) ** 2) for env in envs])


def env_gradients(model: LinearModel, envs: EnvironmentSet) -> np.ndarray:
    """(m, d+1) matrix of full-batch MSE gradients; the last column is the bias."""
    return _Moments(envs).gradients(model.params)


def _check_finite(theta: np.ndarray, step: int):
    if not np.all(np.isfinite(theta)):
        raise TrainingDivergence(step, "parameters")


def _finish(moments: _Moments, theta: np.ndarray, steps: int) -> np.ndarray:
    losses = moments.losses(theta)
    if not np.all(np.isfinite(losses)):
        raise TrainingDivergence(steps)
    return losses


def _descend(moments: _Moments, thetas: np.ndarray, config: TrainConfig,
             thresholds: np.ndarray | None = None,
             traces: list[TrainTrace] | None = None) -> np.ndarray:
    """Run gradient descent on K parameter vectors at once, shape (K, d+1).

    Without thresholds every row takes the plain mean-gradient step. With
    thresholds, row k only moves the features whose consistency ratio clears
    ``thresholds[k]``; the bias column is never gated.
    """
    thetas = np.array(thetas, dtype=float)
    d = thetas.shape[1] - 1
    lr = config.learning_rate
    m = moments.gram.shape[0]
    gate = np.ones_like(thetas)
    # overflow is caught by _check_finite and reported as TrainingDivergence
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.steps):
            grads = 2.0 * (np.einsum("mij,kj->kmi", moments.gram, thetas) - moments.cross)
            mean = grads.sum(axis=1) / m
            if thresholds is not None:
                feat = grads[:, :, :d]
                mu = feat.sum(axis=1) / m
                sigma = np.sqrt(((feat - mu[:, None, :]) ** 2).sum(axis=1) / m)
                ratio = np.abs(mu) / (sigma + EPS)
                gate[:, :d] = ratio >= thresholds[:, None]
                if traces is not None and config.trace_every and step % config.trace_every == 0:
                    for k, trace in enumerate(traces):
                        trace.record(step, ConsistencyStats(mu[k], sigma[k], ratio[k],
                                                            gate[k, :d].astype(np.int8),
                                                            float(thresholds[k])))
                thetas = thetas - lr * (mean * gate)
            else:
                thetas = thetas - lr * mean
            _check_finite(thetas, step)
    return thetas


def _initial(envs: EnvironmentSet, init: LinearModel | None) -> np.ndarray:
    theta = (init or LinearModel.zeros(envs.d)).params
    if theta.shape != (envs.d + 1,):
        raise ValueError("initial model does not match the feature count")
    return theta


def train_erm(envs: EnvironmentSet, config: TrainConfig,
              init: LinearModel | None = None) -> LinearModel:
    moments = _Moments(envs)
    theta = _descend(moments, _initial(envs, init)[None, :], config)[0]
    _finish(moments, theta, config.steps)
    return LinearModel.from_params(theta)


def _cglearn_many(envs: EnvironmentSet, config: TrainConfig, thresholds: Sequence[float],
                  init: LinearModel | None = None) -> tuple[list[LinearModel], list[TrainTrace]]:
    if len(envs) < 2:
        raise ValueError("CGLearn needs at least two environments or batches")
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(thresholds < 0):
        raise ValueError("thresholds must be nonnegative")
    moments = _Moments(envs)
    start = np.tile(_initial(envs, init), (len(thresholds), 1))
    traces = [TrainTrace(threshold=float(t)) for t in thresholds]
    thetas = _descend(moments, start, config, thresholds, traces)
    models = []
    for theta, trace in zip(thetas, traces):
        trace.final_losses = _finish(moments, theta, config.steps)
        models.append(LinearModel.from_params(theta))
    return models, traces


def train_cglearn(envs: EnvironmentSet, config: TrainConfig, threshold: float | None = None,
                  init: LinearModel | None = None) -> tuple[LinearModel, TrainTrace]:
    threshold = config.threshold if threshold is None else threshold
    if threshold is None:
        raise ValueError("train_cglearn needs a threshold (pass one or set config.threshold)")
    models, traces = _cglearn_many(envs, config, [threshold], init)
    return models[0], traces[0]


def irm_penalties(theta: np.ndarray, moments: _Moments) -> tuple[np.ndarray, np.ndarray]:
    """Per-environment IRMv1 terms and their gradients.

    With predictions scaled by s, d risk_e / ds at s = 1 equals
    ``2 (theta' G theta - h' theta)``; the penalty is its square.
    """
    g_theta = moments.gram @ theta
    scale_grad = 2.0 * (g_theta @ theta - moments.cross @ theta)
    d_scale_grad = 2.0 * (2.0 * g_theta - moments.cross)
    return scale_grad ** 2, 2.0 * scale_grad[:, None] * d_scale_grad


def train_irmv1(envs: EnvironmentSet, config: TrainConfig, penalty_weight: float,
                init: LinearModel | None = None, trace: list | None = None) -> LinearModel:
    """Gradient descent on mean_e risk_e + penalty_weight * mean_e penalty_e."""
    if penalty_weight < 0:
        raise ValueError("penalty_weight must be nonnegative")
    if len(envs) < 2:
        raise ValueError("IRMv1 needs at least two environments")
    moments = _Moments(envs)
    theta = (init or LinearModel.zeros(envs.d)).params
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.steps):
            grad = moments.gradients(theta).mean(axis=0)
            if penalty_weight:
                penalties, pen_grads = irm_penalties(theta, moments)
                grad = grad + penalty_weight * pen_grads.mean(axis=0)
                if trace is not None:
                    trace.append(float(penalties.mean()))
            theta = theta - config.learning_rate * grad
            _check_finite(theta, step)
    _finish(moments, theta, config.steps)
    return LinearModel.from_params(theta)


def mse(model: LinearModel, dataset: TabularDataset) -> float:
    return float(np.mean((model.predict(dataset.features) - dataset.target) ** 2))


def select_threshold(train_envs: EnvironmentSet, validation_env: TabularDataset,
                     config: TrainConfig,
                     candidates: Sequence[float] | None = None) -> tuple[float, LinearModel]:
    """Train one CGLearn model per candidate threshold and keep the one with the
    lowest validation MSE; ties go to the smaller threshold."""
    candidates = sorted(config.thresholds if candidates is None else candidates)
    if not candidates:
        raise ValueError("no candidate thresholds")
    models, _ = _cglearn_many(train_envs, config, candidates)
    scores = [mse(model, validation_env) for model in models]
    best = int(np.argmin(scores))  # first minimum, i.e. the smaller threshold
    return candidates[best], models[best]


def lr_for(envs: EnvironmentSet, config: TrainConfig, safety: float = 0.5) -> TrainConfig:
    """Config whose step size is capped at ``safety * 2 / L`` for the pooled loss,
    L being the largest curvature of mean_e risk_e."""
    hess = 2.0 * _Moments(envs).gram.mean(axis=0)
    lipschitz = float(np.linalg.eigvalsh(hess)[-1])
    return replace(config, learning_rate=min(config.learning_rate, safety * 2.0 / lipschitz))
