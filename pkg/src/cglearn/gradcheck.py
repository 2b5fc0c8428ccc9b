"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lingrad, mlp
from .datasets import EnvironmentSet, TabularDataset, Task


@dataclass(frozen=True)
class GradCheck:
    kind: str
    instance: int
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tolerance


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def linear_fd_gradients(model: lingrad.LinearModel, envs: EnvironmentSet, h: float = 1e-5) -> np.ndarray:
    theta = model.params
    out = np.zeros((len(envs), theta.size))
    for j in range(theta.size):
        step = np.zeros_like(theta)
        step[j] = h
        up = lingrad.env_losses(lingrad.LinearModel.from_params(theta + step), envs)
        down = lingrad.env_losses(lingrad.LinearModel.from_params(theta - step), envs)
        out[:, j] = (up - down) / (2 * h)
    return out


def _random_linear_case(rng: np.random.Generator):
    d = int(rng.integers(1, 7))
    envs = []
    for _ in range(int(rng.integers(1, 4))):
        n = int(rng.integers(5, 40))
        x = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0)
        envs.append(TabularDataset(x, x @ rng.standard_normal(d) + rng.standard_normal(n)))
    model = lingrad.LinearModel(rng.standard_normal(d), float(rng.standard_normal()))
    return model, EnvironmentSet(tuple(envs))


def check_linear(instances: int = 50, seed: int = 0, tolerance: float = 1e-6) -> list[GradCheck]:
    rng = np.random.default_rng(seed)
    results = []
    for i in range(instances):
        model, envs = _random_linear_case(rng)
        err = rel_error(lingrad.env_gradients(model, envs), linear_fd_gradients(model, envs))
        results.append(GradCheck("linear", i, err, tolerance))
    return results


def mlp_fd_gradients(model: mlp.MlpModel, env: TabularDataset, loss: str,
                     h: float = 1e-6) -> list[np.ndarray]:
    params = [p.copy() for p in model.params()]
    n_w = len(model.weights)
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1.0, -1.0):
                q = [x.copy() for x in params]
                q[k][idx] += sign * h
                trial = mlp.MlpModel(tuple(q[:n_w]), tuple(q[n_w:]), model.head)
                vals.append(mlp.loss_value(trial, env, loss))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        grads.append(g)
    return grads


def _min_abs_preactivation(model: mlp.MlpModel, x: np.ndarray) -> float:
    a, smallest = x, np.inf
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ w + b
        smallest = min(smallest, float(np.abs(z).min()))
        a = np.maximum(z, 0.0)
    return smallest


def _random_mlp_case(rng: np.random.Generator, margin: float = 1e-3):
    while True:
        d = int(rng.integers(1, 5))
        hidden = tuple(int(h) for h in rng.integers(1, 6, size=int(rng.integers(1, 3))))
        n = int(rng.integers(3, 21))
        classify = bool(rng.integers(2))
        x = rng.standard_normal((n, d))
        if classify:
            k = int(rng.integers(2, 4))
            model = mlp.init_mlp(d, hidden, k, "softmax", int(rng.integers(2**31)))
            env = TabularDataset(x, rng.integers(0, k, n), task=Task.CLASSIFICATION, n_classes=k)
            loss = "cross_entropy"
        else:
            model = mlp.init_mlp(d, hidden, 1, "linear", int(rng.integers(2**31)))
            env = TabularDataset(x, rng.standard_normal(n))
            loss = "mse"
        # finite differences are meaningless next to a ReLU kink
        if _min_abs_preactivation(model, x) > margin:
            return model, env, loss


def check_mlp(instances: int = 50, seed: int = 0, tolerance: float = 1e-4) -> list[GradCheck]:
    rng = np.random.default_rng(seed)
    results = []
    for i in range(instances):
        model, env, loss = _random_mlp_case(rng)
        w_g, b_g, _ = mlp.env_backward(model, env, loss)
        analytic = np.concatenate([g.ravel() for g in w_g + b_g])
        numeric = np.concatenate([g.ravel() for g in mlp_fd_gradients(model, env, loss)])
        results.append(GradCheck("mlp", i, rel_error(analytic, numeric), tolerance))
    return results
