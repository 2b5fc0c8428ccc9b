"""Data carriers shared by every trainer: a single table and an ordered set of environments."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...] = ()
    task: Task = Task.REGRESSION
    n_classes: int | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        task = Task(self.task)
        if task is Task.CLASSIFICATION:
            y = np.asarray(self.target, dtype=np.int64)
        else:
            y = np.asarray(self.target, dtype=float)
        if y.shape != (x.shape[0],):
            raise ValueError(f"target shape {y.shape} does not match {x.shape[0]} rows")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("dataset contains NaN or Inf entries")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("feature_names length does not match feature count")
        n_classes = self.n_classes
        if task is Task.CLASSIFICATION:
            if n_classes is None:
                n_classes = int(y.max()) + 1 if y.size else 0
            if y.size and (y.min() < 0 or y.max() >= n_classes):
                raise ValueError(f"class labels must lie in [0, {n_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "n_classes", n_classes)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "TabularDataset":
        rows = np.asarray(rows)
        return TabularDataset(self.features[rows], self.target[rows], self.feature_names,
                              self.task, self.n_classes)

    def with_features(self, features: np.ndarray) -> "TabularDataset":
        return TabularDataset(features, self.target, self.feature_names, self.task, self.n_classes)

    def with_target(self, target: np.ndarray) -> "TabularDataset":
        return TabularDataset(self.features, target, self.feature_names, self.task, self.n_classes)


@dataclass(frozen=True)
class EnvironmentSet:
    environments: tuple[TabularDataset, ...] = field(default_factory=tuple)

    def __post_init__(self):
        envs = tuple(self.environments)
        if not envs:
            raise ValueError("an EnvironmentSet needs at least one environment")
        first = envs[0]
        for i, env in enumerate(envs[1:], start=1):
            if env.d != first.d or env.task is not first.task or env.feature_names != first.feature_names:
                raise ValueError(f"environment {i} is not schema-compatible with environment 0")
        if first.task is Task.CLASSIFICATION:
            k = max(env.n_classes or 0 for env in envs)
            envs = tuple(
                env if env.n_classes == k else
                TabularDataset(env.features, env.target, env.feature_names, env.task, k)
                for env in envs
            )
        object.__setattr__(self, "environments", envs)

    def __len__(self) -> int:
        return len(self.environments)

    def __iter__(self) -> Iterator[TabularDataset]:
        return iter(self.environments)

    def __getitem__(self, i) -> TabularDataset:
        return self.environments[i]

    @property
    def d(self) -> int:
        return self.environments[0].d

    @property
    def task(self) -> Task:
        return self.environments[0].task

    @property
    def n_classes(self) -> int | None:
        return self.environments[0].n_classes

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.environments[0].feature_names

    def subset(self, indices: Sequence[int]) -> "EnvironmentSet":
        return EnvironmentSet(tuple(self.environments[i] for i in indices))

    def pooled(self) -> TabularDataset:
        """All rows of all environments stacked in environment order."""
        first = self.environments[0]
        return TabularDataset(
            np.vstack([e.features for e in self.environments]),
            np.concatenate([e.target for e in self.environments]),
            first.feature_names, first.task, first.n_classes,
        )
