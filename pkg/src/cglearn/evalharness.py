"""Metrics, significance tests and the leave-one-environment-out protocol."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats as sps

from .data_io import TargetScaler, fit_standardizer
from .datasets import EnvironmentSet, TabularDataset, Task
from .synthgen import GroundTruth

ALPHA = 0.05


def coefficient_errors(weights, truth: GroundTruth) -> tuple[float, float]:
    """Mean squared coefficient error on causes and on effects, in the generative basis."""
    w = getattr(weights, "weights", weights)
    w = np.asarray(w, dtype=float)
    if w.shape != (truth.scramble.shape[0],):
        raise ValueError(f"weight vector of shape {w.shape} does not match the ground truth")
    g = truth.to_generative(w)
    k = truth.d_causal
    return float(np.mean((g[:k] - truth.w_causal) ** 2)), float(np.mean(g[k:] ** 2))


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.size == 0 or pred.shape != target.shape:
        raise ValueError("predictions and targets must be nonempty and equally long")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def regression_metrics(pred, target) -> dict[str, float]:
    return {"rmse": rmse(pred, target)}


def classification_metrics(pred, target, n_classes: int | None = None) -> dict[str, float]:
    """Accuracy in percent plus weighted and macro one-vs-rest F1."""
    pred = np.asarray(pred, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    if pred.size == 0 or pred.shape != target.shape:
        raise ValueError("predictions and targets must be nonempty and equally long")
    k = n_classes or int(max(pred.max(), target.max())) + 1
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (target, pred), 1)
    tp = np.diag(conf).astype(float)
    support = conf.sum(1).astype(float)
    predicted = conf.sum(0).astype(float)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros(k), where=denom > 0)
    present = support > 0
    return {
        "accuracy": float(100.0 * tp.sum() / pred.size),
        "f1": float((f1 * support).sum() / support.sum()),
        "f1_macro": float(f1[present].mean()),
    }


@dataclass(frozen=True)
class SignificanceResult:
    t: float
    df: float
    p: float
    significant: bool


def welch_ttest(a, b, alpha: float = ALPHA) -> SignificanceResult:
    """Two-sided Welch t-test (unequal variances)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return SignificanceResult(0.0, float(a.size + b.size - 2), 1.0, False)
        return SignificanceResult(math.copysign(math.inf, diff), float(a.size + b.size - 2), 0.0, True)
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = float(min(1.0, 2.0 * sps.t.sf(abs(t), df)))
    return SignificanceResult(float(t), float(df), p, p < alpha)


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class EvalReport:
    method: str
    dataset: str = ""
    per_trial: dict[str, list[float]] = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def add_trial(self, metrics: dict[str, float]):
        for key, value in metrics.items():
            self.per_trial.setdefault(key, []).append(float(value))

    def aggregate(self) -> dict[str, tuple[float, float]]:
        return {k: mean_std(v) for k, v in self.per_trial.items()}

    @property
    def n_trials(self) -> int:
        return max((len(v) for v in self.per_trial.values()), default=0)

    def to_json(self) -> str:
        return json.dumps({
            "method": self.method,
            "dataset": self.dataset,
            "per_trial": self.per_trial,
            "aggregate": {k: {"mean": m, "std": s} for k, (m, s) in self.aggregate().items()},
            "rows": self.rows,
        }, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys = sorted({k for row in self.rows for k in row})
        writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()


# -- leave one environment out ------------------------------------------------

def loeo_folds(m: int) -> list[tuple[int, int, list[int]]]:
    """(test, validation, training) indices per fold: the validation environment
    is the highest index left after removing the test one."""
    if m < 3:
        raise ValueError("leave-one-environment-out needs at least three environments")
    folds = []
    for test in range(m):
        rest = [i for i in range(m) if i != test]
        folds.append((test, rest[-1], rest[:-1]))
    return folds


def _fit_method(method: str, family: str, train: EnvironmentSet, val: TabularDataset,
                config) -> tuple[Callable[[np.ndarray], np.ndarray], float | None, EnvironmentSet]:
    """Train one method; returns a predictor, the chosen threshold and the envs it saw."""
    if family == "mlp":
        from . import mlp
        if method == "erm":
            pooled = EnvironmentSet(tuple(train) + (val,))
            model = mlp.train_mlp_erm(pooled, config)
            return model.predict, None, pooled
        if method == "cglearn":
            if config.threshold is not None:
                model, _ = mlp.train_mlp_cglearn(train, config)
                return model.predict, config.threshold, train
            t, model = mlp.select_mlp_threshold(train, val, config)
            return model.predict, t, train
    elif family == "linear":
        from . import lingrad
        if method == "erm":
            pooled = EnvironmentSet(tuple(train) + (val,))
            model = lingrad.train_erm(pooled, config)
            return model.predict, None, pooled
        if method == "cglearn":
            if config.threshold is not None:
                model, _ = lingrad.train_cglearn(train, config)
                return model.predict, config.threshold, train
            t, model = lingrad.select_threshold(train, val, config)
            return model.predict, t, train
    raise ValueError(f"unsupported method {method!r} for model family {family!r}")


def _metrics(task: Task, pred: np.ndarray, dataset: TabularDataset, scaler: TargetScaler | None,
             n_classes: int | None) -> dict[str, float]:
    if task is Task.CLASSIFICATION:
        return classification_metrics(pred.argmax(1), dataset.target, n_classes)
    return regression_metrics(scaler.invert(pred), dataset.target)


def run_fold(envs: EnvironmentSet, fold: tuple[int, int, list[int]], method: str, config,
             family: str = "mlp") -> dict:
    test_i, val_i, train_idx = fold
    if method == "cglearn" and len(train_idx) < 2:
        # three environments: the validation one doubles as a training environment
        train_idx = train_idx + [val_i]
    rest = envs.subset(sorted(set(train_idx) | {val_i}))
    feat = fit_standardizer(rest, eps_guard=True)
    scaler = TargetScaler.fit(rest) if envs.task is Task.REGRESSION else None

    def prep(env: TabularDataset) -> TabularDataset:
        env = feat.apply(env)
        return scaler.apply(env) if scaler else env

    train = EnvironmentSet(tuple(prep(envs[i]) for i in train_idx))
    val = prep(envs[val_i])
    predict, threshold, seen = _fit_method(method, family, train, val, config)
    seen_idx = train_idx + [val_i] if len(seen) > len(train) else train_idx
    pooled_train = envs.subset(seen_idx).pooled()
    test = envs[test_i]
    k = envs.n_classes
    train_m = _metrics(envs.task, predict(feat.apply(pooled_train).features), pooled_train, scaler, k)
    test_m = _metrics(envs.task, predict(feat.apply(test).features), test, scaler, k)
    row = {"test_env": test_i, "val_env": val_i, "threshold": threshold}
    row.update({f"{k_}_train": v for k_, v in train_m.items()})
    row.update({f"{k_}_test": v for k_, v in test_m.items()})
    return row


def leave_one_env_out(envs: EnvironmentSet, method: str, config, trials: int = 10, seed: int = 0,
                      family: str = "mlp", dataset: str = "") -> EvalReport:
    """Every environment is the test set once; fold metrics are averaged per
    trial, and each trial reseeds the model initialization."""
    folds = loeo_folds(len(envs))
    report = EvalReport(method, dataset)
    for trial in range(trials):
        cfg = replace(config, seed=seed + trial)
        rows = []
        for fold in folds:
            row = run_fold(envs, fold, method, cfg, family)
            row.update({"trial": trial, "method": method, "dataset": dataset})
            rows.append(row)
        report.rows.extend(rows)
        metric_keys = [k for k in rows[0] if k.endswith("_train") or k.endswith("_test")]
        report.add_trial({k: float(np.mean([r[k] for r in rows])) for k in metric_keys})
    return report
