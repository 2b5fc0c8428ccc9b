"""Per-trial runners for each scenario and the summary table they feed."""

from __future__ import annotations

import json
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

from . import lingrad
from .evalharness import coefficient_errors, mean_std, welch_ttest
from .lingrad import TrainConfig, TrainingDivergence
from .synthgen import (SemConfig, generate_environments, generate_two_feature_demo,
                       split_into_batches)

LINEAR_METHODS = ("erm", "cglearn", "irmv1")
IRM_PENALTIES = (0.01, 0.1, 1.0)
SUMMARY_COLUMNS = ("scenario", "case", "method", "metric", "mean", "std", "n", "p_vs_erm", "significant")


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _irm_selected(train, val, cfg: TrainConfig, penalties: Sequence[float]):
    best = None
    for lam in sorted(penalties):
        try:
            model = lingrad.train_irmv1(train, cfg, lam)
        except TrainingDivergence:
            continue
        score = lingrad.mse(model, val)
        if best is None or score < best[0]:
            best = (score, lam, model)
    if best is None:
        raise TrainingDivergence(cfg.steps, "IRMv1 loss for every penalty weight")
    return best[1], best[2]


def _linear_rows(scenario: str, case: str, trial: int, seed: int, truth, train, val, erm_envs,
                 methods: Sequence[str], base: TrainConfig, penalties: Sequence[float]) -> list[dict]:
    cfg = lingrad.lr_for(train, base)
    rows = []
    for method in methods:
        extra: dict = {}
        if method == "erm":
            model = lingrad.train_erm(erm_envs, lingrad.lr_for(erm_envs, base))
        elif method == "cglearn":
            if base.threshold is not None:
                model, _ = lingrad.train_cglearn(train, cfg)
                extra["threshold"] = base.threshold
            else:
                t, model = lingrad.select_threshold(train, val, cfg)
                extra["threshold"] = t
        elif method == "irmv1":
            lam, model = _irm_selected(train, val, cfg, penalties)
            extra["penalty_weight"] = lam
        else:
            raise ValueError(f"unknown linear method {method!r}")
        causal, noncausal = coefficient_errors(model, truth)
        rows.append({
            "scenario": scenario, "case": case, "method": method, "trial": trial, "seed": seed,
            "causal_error": causal, "noncausal_error": noncausal,
            "val_mse": lingrad.mse(model, val), **extra,
        })
    return rows


def linear_multi_trial(case: str, trial: int, seed: int, methods: Sequence[str] = ("erm", "cglearn"),
                       train: TrainConfig = TrainConfig(), sem: dict | None = None,
                       irm_penalties: Sequence[float] = IRM_PENALTIES) -> list[dict]:
    """Train on every environment but the last (e = 5 by default), validate on the last."""
    s = trial_seed(seed, trial)
    envs, truth = generate_environments(SemConfig.from_code(case, seed=s, **(sem or {})))
    if len(envs) < 3:
        raise ValueError("linear-multi needs at least three environments")
    tr = envs.subset(range(len(envs) - 1))
    return _linear_rows("linear-multi", case, trial, s, truth, tr, envs[len(envs) - 1], tr,
                        methods, train, irm_penalties)


def linear_single_trial(case: str, trial: int, seed: int, batches: int = 3,
                        methods: Sequence[str] = ("erm", "cglearn"), train: TrainConfig = TrainConfig(),
                        sem: dict | None = None, irm_penalties: Sequence[float] = IRM_PENALTIES) -> list[dict]:
    """One e = 2 dataset cut into batches; CGLearn trains on all batches but the
    last and validates on it, ERM trains on the whole dataset."""
    s = trial_seed(seed, trial)
    opts = {"env_values": (2.0,), **(sem or {})}
    envs, truth = generate_environments(SemConfig.from_code(case, seed=s, **opts))
    parts = split_into_batches(envs[0], batches, seed=s)
    tr = parts.subset(range(batches - 1))
    rows = _linear_rows(f"linear-single-b{batches}", case, trial, s, truth, tr, parts[batches - 1],
                        envs, methods, train, irm_penalties)
    for row in rows:
        row["batches"] = batches
    return rows


def demo_trial(trial: int, seed: int, methods: Sequence[str] = ("erm", "cglearn"),
               train: TrainConfig = TrainConfig(), e_values=(0.2, 2.0, 5.0), n: int = 1000,
               irm_penalties: Sequence[float] = IRM_PENALTIES) -> list[dict]:
    s = trial_seed(seed, trial)
    envs = generate_two_feature_demo(e_values, n, s)
    tr = envs.subset(range(len(envs) - 1))
    val = envs[len(envs) - 1]
    rows = []
    for method in methods:
        extra: dict = {}
        if method == "erm":
            model = lingrad.train_erm(tr, train)
        elif method == "cglearn":
            if train.threshold is not None:
                model, _ = lingrad.train_cglearn(tr, train)
                extra["threshold"] = train.threshold
            else:
                extra["threshold"], model = lingrad.select_threshold(tr, val, train)
        elif method == "irmv1":
            extra["penalty_weight"], model = _irm_selected(tr, val, train, irm_penalties)
        else:
            raise ValueError(f"unknown method {method!r}")
        rows.append({"scenario": "two-feature-demo", "case": "demo", "method": method, "trial": trial,
                     "seed": s, "w1": float(model.weights[0]), "w2": float(model.weights[1]),
                     "abs_w2": abs(float(model.weights[1])), "w1_error": abs(float(model.weights[0]) - 1.0),
                     **extra})
    return rows


def run_trials(fn: Callable[[int], list[dict]], trials: int, jobs: int = 1) -> list[dict]:
    """Run ``fn(trial)`` for every trial and return rows in trial order."""
    if jobs <= 1 or trials <= 1:
        results = [fn(t) for t in range(trials)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, range(trials)))
    return [row for rows in results for row in rows]


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def metric_columns(rows: Iterable[dict]) -> list[str]:
    skip = {"trial", "seed", "batches", "threshold", "penalty_weight", "test_env", "val_env",
            "n_envs", "tolerance"}
    keys = []
    for row in rows:
        for k, v in row.items():
            if k not in skip and k not in keys and isinstance(v, (int, float)) and not isinstance(v, bool):
                keys.append(k)
    return keys


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Mean/std per (scenario, case, method, metric) with a Welch test against ERM."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    order: list[tuple] = []
    for row in rows:
        for metric in metric_columns([row]):
            key = (row["scenario"], row["case"], row["method"], metric)
            if key not in groups:
                order.append(key)
            groups[key].append(float(row[metric]))
    out = []
    for key in order:
        scenario, case, method, metric = key
        values = groups[key]
        mean, std = mean_std(values)
        p, sig = "", ""
        ref = groups.get((scenario, case, "erm", metric))
        if method != "erm" and ref is not None and len(ref) >= 2 and len(values) >= 2:
            res = welch_ttest(values, ref)
            p, sig = res.p, res.significant
        out.append(dict(zip(SUMMARY_COLUMNS, (scenario, case, method, metric, mean, std, len(values), p, sig))))
    return out


def rows_to_jsonl(rows: Sequence[dict]) -> str:
    return "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)


def real_trial(envs, dataset: str, scenario: str, trial: int, seed: int,
               methods: Sequence[str] = ("erm", "cglearn"), config=None, family: str = "mlp") -> list[dict]:
    """One leave-one-environment-out pass per method, fold metrics averaged."""
    from .evalharness import leave_one_env_out
    from .mlp import MlpTrainConfig

    config = config or MlpTrainConfig()
    s = trial_seed(seed, trial)
    rows = []
    for method in methods:
        report = leave_one_env_out(envs, method, config, trials=1, seed=s, family=family, dataset=dataset)
        row = {"scenario": scenario, "case": dataset, "method": method, "trial": trial, "seed": s}
        row.update({k: v[0] for k, v in report.per_trial.items()})
        row["folds"] = [{k: v for k, v in r.items() if k not in ("trial", "method", "dataset")}
                        for r in report.rows]
        rows.append(row)
    return rows
