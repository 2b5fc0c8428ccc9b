"""CSV loading for the real-data experiments and train-only standardization.

The library never downloads anything. Put the CSV files in a data directory
(``--data-dir`` on the CLI, or ``$CGLEARN_DATA``, default ``./data``) under the
file names in ``BUNDLED_SPECS``; see the README for the expected headers.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import EnvironmentSet, TabularDataset, Task


class DataLoadError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str
    target: str
    task: Task = Task.REGRESSION
    n_expected: int | None = None
    d_expected: int | None = None
    sha256: str | None = None  # advisory only, never enforced

    def resolve(self, data_dir: str | Path | None = None) -> "DatasetSpec":
        base = Path(data_dir or os.environ.get("CGLEARN_DATA", "data"))
        p = Path(self.path)
        return DatasetSpec(self.name, str(p if p.is_absolute() else base / p), self.target,
                           self.task, self.n_expected, self.d_expected, self.sha256)


BUNDLED_SPECS = {
    "boston": DatasetSpec("boston", "boston.csv", "MEDV", Task.REGRESSION, 506, 13),
    "yacht": DatasetSpec("yacht", "yacht.csv", "Rr", Task.REGRESSION, 308, 6),
    "wine-red": DatasetSpec("wine-red", "winequality-red.csv", "quality", Task.CLASSIFICATION, 1599, 11),
    "wine-white": DatasetSpec("wine-white", "winequality-white.csv", "quality", Task.CLASSIFICATION, 4898, 11),
}


@dataclass(frozen=True)
class LoadedDataset:
    dataset: TabularDataset
    class_values: tuple = ()  # class index i <-> original label class_values[i]


def _sniff_delimiter(header: str) -> str:
    # the UCI wine files use ';'
    return ";" if header.count(";") > header.count(",") else ","


def load_csv(spec: DatasetSpec) -> LoadedDataset:
    path = Path(spec.path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataLoadError(f"{spec.name}: cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataLoadError(f"{spec.name}: {path} is empty")
    rows = list(csv.reader(lines, delimiter=_sniff_delimiter(lines[0])))
    header = [h.strip().strip('"') for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if spec.target not in header:
        raise DataLoadError(f"{spec.name}: target column {spec.target!r} not in header {header}")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataLoadError(f"{spec.name}: line {i} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataLoadError(f"{spec.name}: non-numeric value {cell!r} at line {i}, "
                                    f"column {header[j]!r}") from None
            if not np.isfinite(v):
                raise DataLoadError(f"{spec.name}: non-finite value at line {i}, column {header[j]!r}")
            values[i - 2, j] = v
    t = header.index(spec.target)
    names = tuple(h for j, h in enumerate(header) if j != t)
    x = np.delete(values, t, axis=1)
    y = values[:, t]
    if spec.n_expected is not None and x.shape[0] != spec.n_expected:
        raise DataLoadError(f"{spec.name}: expected {spec.n_expected} rows, found {x.shape[0]}")
    if spec.d_expected is not None and x.shape[1] != spec.d_expected:
        raise DataLoadError(f"{spec.name}: expected {spec.d_expected} features, found {x.shape[1]}")
    task = Task(spec.task)
    if task is Task.CLASSIFICATION:
        classes, idx = np.unique(y, return_inverse=True)
        class_values = tuple(int(c) if float(c).is_integer() else float(c) for c in classes)
        return LoadedDataset(TabularDataset(x, idx, names, task, len(classes)), class_values)
    return LoadedDataset(TabularDataset(x, y, names, task))


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, dataset: TabularDataset) -> TabularDataset:
        return dataset.with_features((dataset.features - self.mean) / self.std)

    def apply_all(self, envs: EnvironmentSet) -> EnvironmentSet:
        return EnvironmentSet(tuple(self.apply(e) for e in envs))


def fit_standardizer(train_envs: EnvironmentSet, eps_guard: bool = False) -> Standardizer:
    """Mean and population std of the pooled training rows only."""
    x = train_envs.pooled().features
    if x.shape[0] == 0:
        raise ValueError("no training rows")
    mean = x.mean(0)
    std = x.std(0)
    if np.any(std == 0):
        if not eps_guard:
            cols = [train_envs.feature_names[j] for j in np.flatnonzero(std == 0)]
            raise ValueError(f"zero-variance training columns: {cols}")
        std = np.where(std == 0, 1.0, std)
    return Standardizer(mean, std)


@dataclass(frozen=True)
class TargetScaler:
    """Regression targets scaled by training statistics; metrics are reported
    after mapping predictions back."""

    mean: float
    std: float

    @classmethod
    def fit(cls, train_envs: EnvironmentSet) -> "TargetScaler":
        y = train_envs.pooled().target
        sd = float(y.std())
        return cls(float(y.mean()), sd if sd > 0 else 1.0)

    def apply(self, dataset: TabularDataset) -> TabularDataset:
        return dataset.with_target((dataset.target - self.mean) / self.std)

    def invert(self, pred: np.ndarray) -> np.ndarray:
        return np.asarray(pred) * self.std + self.mean
