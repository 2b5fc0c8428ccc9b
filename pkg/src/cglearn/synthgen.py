"""Linear structural-equation benchmark with known causal structure.

Eight cases come from three binary factors, written as a three-letter code:

* ``F``/``P``: fully observed, or partially observed with hidden confounders
* ``O``/``E``: homoskedastic or heteroskedastic target noise
* ``U``/``S``: unscrambled, or observed through a random orthogonal matrix

Within one environment with parameter ``e``::

    h      ~ N(0, e^2 I)                      (P only)
    X_cau  ~ N(0, e^2 I) + a * h              (a * h only for P)
    Y      = X_cau @ w_causal + s_e * N(0, 1) + h @ b
    X_eff  = Y * w_effect + N(0, I)
    X_obs  = S @ [X_cau, X_eff]

with ``s_e = e`` for heteroskedastic noise and 1 otherwise.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import EnvironmentSet, TabularDataset, Task

CASE_CODES = tuple(
    f + o + s for f, o, s in itertools.product("FP", "OE", "US")
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SemConfig:
    scrambled: bool = False
    partially_observed: bool = False
    heteroskedastic: bool = False
    env_values: tuple[float, ...] = (0.2, 2.0, 5.0)
    n_samples: int = 1000
    d_causal: int = 5
    d_effect: int = 5
    seed: int = 0
    causal_scale: float = 1.0
    effect_scale: float = 1.0
    confounder_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "env_values", tuple(float(e) for e in self.env_values))
        if not self.env_values or any(e <= 0 for e in self.env_values):
            raise ConfigError("env_values must be a nonempty list of positive numbers")
        if self.n_samples < 1 or self.d_causal < 1 or self.d_effect < 1:
            raise ConfigError("n_samples, d_causal and d_effect must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    @classmethod
    def from_code(cls, code: str, **kwargs) -> "SemConfig":
        code = code.upper()
        if len(code) != 3 or code[0] not in "FP" or code[1] not in "OE" or code[2] not in "US":
            raise ConfigError(f"unknown case code {code!r}; expected one of {CASE_CODES}")
        return cls(
            partially_observed=code[0] == "P",
            heteroskedastic=code[1] == "E",
            scrambled=code[2] == "S",
            **kwargs,
        )

    @property
    def code(self) -> str:
        return (("P" if self.partially_observed else "F")
                + ("E" if self.heteroskedastic else "O")
                + ("S" if self.scrambled else "U"))

    @property
    def d(self) -> int:
        return self.d_causal + self.d_effect

    def with_seed(self, seed: int) -> "SemConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class GroundTruth:
    w_causal: np.ndarray
    w_effect: np.ndarray
    scramble: np.ndarray
    confounder_to_causes: np.ndarray | None = None
    confounder_to_target: np.ndarray | None = None

    @property
    def d_causal(self) -> int:
        return self.w_causal.shape[0]

    def invariant_weights(self) -> np.ndarray:
        """Generative-basis weights of the causal solution: ``[w_causal, 0]``."""
        return np.concatenate([self.w_causal, np.zeros_like(self.w_effect)])

    def to_generative(self, w_obs: np.ndarray) -> np.ndarray:
        # x_obs = S x_gen, so w_obs . x_obs = (S^T w_obs) . x_gen
        return self.scramble.T @ np.asarray(w_obs, dtype=float)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    # sign fix makes the draw Haar-distributed
    return q * np.sign(np.diag(r))


def _feature_names(d: int) -> tuple[str, ...]:
    return tuple(f"X{j + 1}" for j in range(d))


def draw_ground_truth(config: SemConfig, rng: np.random.Generator) -> GroundTruth:
    w_causal = config.causal_scale * rng.standard_normal(config.d_causal)
    w_effect = config.effect_scale * rng.standard_normal(config.d_effect)
    scramble = random_orthogonal(config.d, rng) if config.scrambled else np.eye(config.d)
    a = b = None
    if config.partially_observed:
        a = config.confounder_scale * rng.standard_normal(config.d_causal)
        b = config.confounder_scale * rng.standard_normal(config.d_causal)
    return GroundTruth(w_causal, w_effect, scramble, a, b)


def sample_environment(config: SemConfig, truth: GroundTruth, e: float,
                       n: int, rng: np.random.Generator) -> TabularDataset:
    x_cau = rng.normal(0.0, e, size=(n, config.d_causal))
    noise_scale = e if config.heteroskedastic else 1.0
    y = x_cau @ truth.w_causal + noise_scale * rng.standard_normal(n)
    if config.partially_observed:
        h = rng.normal(0.0, e, size=(n, config.d_causal))
        x_cau = x_cau + h * truth.confounder_to_causes
        y = y + h @ truth.confounder_to_target
    x_eff = y[:, None] * truth.w_effect + rng.standard_normal((n, config.d_effect))
    x_gen = np.hstack([x_cau, x_eff])
    return TabularDataset(x_gen @ truth.scramble.T, y, _feature_names(config.d), Task.REGRESSION)


def generate_environments(config: SemConfig) -> tuple[EnvironmentSet, GroundTruth]:
    """One dataset per entry of ``config.env_values``, sharing a single ground truth."""
    rng = np.random.default_rng(config.seed)
    truth = draw_ground_truth(config, rng)
    envs = [sample_environment(config, truth, e, config.n_samples, rng) for e in config.env_values]
    return EnvironmentSet(tuple(envs)), truth


# Spurious coefficient of X2 on Y in the two-feature demo: positive in the
# training environments {0.2, 2}, sharply negative at the held-out e = 5.
def demo_spurious_coefficient(e: float) -> float:
    return e * (3.0 - e)


def generate_two_feature_demo(e_values: Sequence[float] = (0.2, 2.0, 5.0), n: int = 1000,
                              seed: int = 0, noise_scale: float = 0.25) -> EnvironmentSet:
    """X1 causes Y with an environment-free coefficient of 1; X2 is an effect of Y
    whose coefficient ``e * (3 - e)`` shifts with the environment."""
    e_values = tuple(float(e) for e in e_values)
    if not e_values or any(e <= 0 for e in e_values):
        raise ConfigError("e_values must be a nonempty list of positive numbers")
    if n < 1:
        raise ConfigError("n must be positive")
    rng = np.random.default_rng(seed)
    envs = []
    for e in e_values:
        x1 = rng.standard_normal(n)
        y = x1 + noise_scale * e * rng.standard_normal(n)
        x2 = demo_spurious_coefficient(e) * y + rng.standard_normal(n)
        envs.append(TabularDataset(np.column_stack([x1, x2]), y, ("X1", "X2"), Task.REGRESSION))
    return EnvironmentSet(tuple(envs))


def split_into_batches(dataset: TabularDataset, b: int, seed: int = 0) -> EnvironmentSet:
    """Random partition into ``b`` near-equal batches; earlier batches take the
    remainder rows. The last batch is the validation pseudo-environment."""
    if b < 2:
        raise ValueError("need at least two batches")
    if b > dataset.n:
        raise ValueError(f"cannot split {dataset.n} rows into {b} batches")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    return EnvironmentSet(tuple(dataset.take(np.sort(part)) for part in np.array_split(perm, b)))


def export_csv(envs: EnvironmentSet, directory: str | Path, prefix: str = "env") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, env in enumerate(envs):
        path = directory / f"{prefix}_{i}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(env.feature_names) + ["target"])
            for row, y in zip(env.features, env.target):
                writer.writerow([repr(float(v)) for v in row] + [repr(y.item())])
        paths.append(path)
    return paths
