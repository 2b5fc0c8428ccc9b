"""Acceptance criteria, each at its stated tolerance.

A line per criterion (PASS / FAIL / SKIP plus the measured numbers) is printed
in the "acceptance criteria" section at the end of the pytest report.
Real-data checks run only when the CSVs are present in $CGLEARN_DATA (or ./data).
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from cglearn import cli, experiments, gradcheck
from cglearn.consistency import DEFAULT_THRESHOLDS, ConsistencyStats
from cglearn.data_io import BUNDLED_SPECS, load_csv
from cglearn.datasets import EnvironmentSet, TabularDataset
from cglearn.envcluster import build_environments
from cglearn.lingrad import LinearModel, TrainConfig, train_cglearn, train_erm
from cglearn.mlp import MlpTrainConfig, init_mlp, train_mlp_cglearn, train_mlp_erm
from cglearn.synthgen import CASE_CODES

from conftest import record_criterion

HETEROSKEDASTIC = ("FEU", "FES", "PEU", "PES")


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def _data_available(*names):
    return all(Path(BUNDLED_SPECS[n].resolve().path).exists() for n in names)


def test_criterion_1_consistency_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    mask_mismatch = 0
    for _ in range(1000):
        m = int(rng.integers(2, 9))
        d = int(rng.integers(1, 9))
        values = rng.standard_normal((m, d)) * rng.uniform(0.01, 10.0, size=d)
        t = float(rng.choice(DEFAULT_THRESHOLDS))
        stats = ConsistencyStats.from_samples(values, t)
        for j in range(d):
            col = [float(v) for v in values[:, j]]
            mu = math.fsum(col) / m
            sigma = math.sqrt(math.fsum((g - mu) ** 2 for g in col) / m)
            ratio = abs(mu) / (sigma + 1e-12)
            worst = max(worst, _rel(stats.mu[j], mu), _rel(stats.sigma[j], sigma), _rel(stats.ratio[j], ratio))
            mask_mismatch += int(stats.mask[j] != int(ratio >= t))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and mask_mismatch == 0 and elapsed < 1.0
    record_criterion(1, ok, f"max rel error {worst:.2e}, mask mismatches {mask_mismatch}, {elapsed:.2f}s")
    assert worst <= 1e-12 and mask_mismatch == 0
    assert elapsed < 1.0


def test_criterion_2_finite_differences():
    start = time.perf_counter()
    lin = gradcheck.check_linear(50, seed=0, tolerance=1e-6)
    net = gradcheck.check_mlp(50, seed=0, tolerance=1e-4)
    elapsed = time.perf_counter() - start
    lin_max = max(r.rel_error for r in lin)
    net_max = max(r.rel_error for r in net)
    ok = all(r.passed for r in lin + net) and elapsed < 30
    record_criterion(2, ok, f"linear max {lin_max:.1e} (< 1e-6), MLP max {net_max:.1e} (< 1e-4), {elapsed:.1f}s")
    assert all(r.passed for r in lin) and all(r.passed for r in net)
    assert elapsed < 30


def test_criterion_3_two_feature_demo():
    start = time.perf_counter()
    rows = [r for t in range(50) for r in experiments.demo_trial(t, seed=0)]
    elapsed = time.perf_counter() - start
    cg = [r for r in rows if r["method"] == "cglearn"]
    erm = [r for r in rows if r["method"] == "erm"]
    cg_ok = sum(r["abs_w2"] < 0.05 and r["w1_error"] < 0.1 for r in cg) / len(cg)
    erm_ok = sum(r["abs_w2"] > 0.1 for r in erm) / len(erm)
    ok = cg_ok >= 0.9 and erm_ok >= 0.9 and elapsed < 120
    record_criterion(3, ok, f"CGLearn |w2|<0.05 & |w1-1|<0.1 in {cg_ok:.0%}, ERM |w2|>0.1 in {erm_ok:.0%}, "
                            f"{elapsed:.1f}s")
    assert cg_ok >= 0.9 and erm_ok >= 0.9
    assert elapsed < 120


def _significantly_lower(summary, case, metric):
    row = next(r for r in summary if r["case"] == case and r["method"] == "cglearn" and r["metric"] == metric)
    ref = next(r for r in summary if r["case"] == case and r["method"] == "erm" and r["metric"] == metric)
    return row["mean"] < ref["mean"] and row["significant"] is True, row["p_vs_erm"]


def test_criterion_4_multi_environment_sem():
    start = time.perf_counter()
    rows = []
    for case in ("FEU", "PES"):
        rows += experiments.run_trials(
            lambda t, c=case: experiments.linear_multi_trial(c, t, seed=0), 50, 1)
    elapsed = time.perf_counter() - start
    summary = experiments.summarize(rows)
    parts, ok = [], elapsed < 15 * 60
    for case in ("FEU", "PES"):
        for metric in ("causal_error", "noncausal_error"):
            good, p = _significantly_lower(summary, case, metric)
            ok &= good
            parts.append(f"{case} {metric.split('_')[0]} p={p:.2g}")
    record_criterion(4, ok, ", ".join(parts) + f", {elapsed:.0f}s")
    assert ok


def test_criterion_5_single_environment_batches():
    start = time.perf_counter()
    rows = []
    for case in CASE_CODES:
        rows += experiments.run_trials(
            lambda t, c=case: experiments.linear_single_trial(c, t, seed=0, batches=3), 50, 1)
    elapsed = time.perf_counter() - start
    summary = experiments.summarize(rows)
    failures, ok = [], elapsed < 20 * 60
    for case in CASE_CODES:
        metrics = ("causal_error", "noncausal_error") if case in HETEROSKEDASTIC else ("causal_error",)
        for metric in metrics:
            good, p = _significantly_lower(summary, case, metric)
            if not good:
                failures.append(f"{case}/{metric.split('_')[0]} p={p:.2g}")
            ok &= good
    detail = "all 12 comparisons significant" if not failures else f"{len(failures)}/12 not significant: " + \
        ", ".join(failures[:4]) + (" ..." if len(failures) > 4 else "")
    record_criterion(5, ok, detail + f", {elapsed:.0f}s")
    assert ok


def _blobs(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-20, 20, size=(3, 4))
    while min(np.linalg.norm(a - b) for i, a in enumerate(centers) for b in centers[i + 1:]) < 10:
        centers = rng.uniform(-20, 20, size=(3, 4))
    x = np.vstack([rng.normal(c, 1.0, size=(50, 4)) for c in centers])
    return TabularDataset(x, np.zeros(len(x)))


def test_criterion_6_silhouette_selection():
    start = time.perf_counter()
    hits = sum(build_environments(_blobs(s), (2, 9), seed=s)[1].k == 3 for s in range(100))
    elapsed = time.perf_counter() - start
    detail = f"blobs k=3 in {hits}/100 seeds, {elapsed:.1f}s"
    ok = hits >= 95 and elapsed < 120
    expected = {"boston": 7, "yacht": 5, "wine-red": 4, "wine-white": 4}
    present = [n for n in expected if _data_available(n)]
    for name in present:
        k = build_environments(load_csv(BUNDLED_SPECS[name].resolve()).dataset, (3, 10), seed=0)[1].k
        detail += f", {name} k={k} (want {expected[name]}+-1)"
        ok &= abs(k - expected[name]) <= 1
    if len(present) < len(expected):
        detail += f", real data skipped for {sorted(set(expected) - set(present))}"
    record_criterion(6, ok, detail)
    assert hits >= 95 and elapsed < 120
    assert ok


def test_criterion_7_real_data_ordering(tmp_path):
    if not _data_available("boston", "yacht", "wine-red", "wine-white"):
        record_criterion(7, None, "UCI CSVs not found in $CGLEARN_DATA or ./data")
        pytest.skip("UCI CSVs not found in $CGLEARN_DATA or ./data")
    start = time.perf_counter()
    ok, parts = True, []
    for scenario, names, metric, better in (
            ("real-regression", ("boston", "yacht"), "rmse_test", np.less_equal),
            ("real-classification", ("wine-red", "wine-white"), "accuracy_test", np.greater_equal)):
        out = tmp_path / scenario
        code = cli.main(["run", "--scenario", scenario, "--dataset", *names, "--trials", "10",
                         "--output", str(out), "--quiet"])
        assert code == 0
        rows = [json.loads(line) for line in (out / "trials.jsonl").read_text().splitlines()]
        for name in names:
            cg = np.mean([r[metric] for r in rows if r["case"] == name and r["method"] == "cglearn"])
            erm = np.mean([r[metric] for r in rows if r["case"] == name and r["method"] == "erm"])
            ok &= bool(better(cg, erm))
            parts.append(f"{name} CGLearn {cg:.2f} vs ERM {erm:.2f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30 * 60
    record_criterion(7, ok, ", ".join(parts) + f", {elapsed:.0f}s")
    assert ok


def _unused_feature_envs(seed):
    # feature 2 is zero in environment 0, so its linear gradient is 0 there and
    # its MLP gradient-norm sample is [0, g]: ratio 1 at every step
    rng = np.random.default_rng(seed)
    x0 = np.column_stack([rng.standard_normal((60, 2)), np.zeros(60)])
    x1 = rng.standard_normal((60, 3))
    return EnvironmentSet((TabularDataset(x0, x0[:, 0] - x0[:, 1]),
                           TabularDataset(x1, x1[:, 0] - x1[:, 1] + 2 * x1[:, 2])))


def test_criterion_8_masking_conservation():
    start = time.perf_counter()
    checks = []
    for seed in range(10):
        envs = _unused_feature_envs(seed)
        rng = np.random.default_rng(seed)
        # linear: a feature masked at every step keeps its initial weight bit-for-bit
        init = LinearModel(rng.standard_normal(3), float(rng.standard_normal()))
        cfg = TrainConfig(learning_rate=0.05, steps=500, trace_every=1)
        model, trace = train_cglearn(envs, cfg, threshold=4.0, init=init)
        always = np.flatnonzero(~np.array(trace.masks).any(axis=0))
        checks.append(2 in always and np.array_equal(model.weights[always], init.weights[always]))
        # threshold 0 is ERM, bit-for-bit
        checks.append(np.array_equal(train_cglearn(envs, cfg, threshold=0.0, init=init)[0].params,
                                     train_erm(envs, cfg, init).params))
        # MLP: same two properties on the first-layer rows
        net0 = init_mlp(3, (8, 4), seed=seed)
        mcfg = MlpTrainConfig(hidden_sizes=(8, 4), learning_rate=0.05, steps=150, seed=seed, trace_every=1)
        net, mtrace = train_mlp_cglearn(envs, mcfg, threshold=4.0, init=net0)
        always = np.flatnonzero(~np.array(mtrace.masks).any(axis=0))
        checks.append(2 in always and np.array_equal(net.first_layer[always], net0.first_layer[always]))
        erm = train_mlp_erm(envs, mcfg, init=net0)
        zero, _ = train_mlp_cglearn(envs, mcfg, threshold=0.0, init=net0)
        checks.append(all(np.array_equal(a, b) for a, b in zip(erm.params(), zero.params())))
    elapsed = time.perf_counter() - start
    ok = all(checks) and elapsed < 60
    record_criterion(8, ok, f"{sum(checks)}/{len(checks)} conservation checks exact, {elapsed:.1f}s")
    assert all(checks)
    assert elapsed < 60


def _write_stand_in(path, n, d, target, classify, seed, sep=","):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d)) + np.repeat(rng.normal(0, 4, (3, d)), [n - 2 * (n // 3), n // 3, n // 3], 0)
    y = np.round(np.clip(x[:, 0], -2, 2)) + 5 if classify else x[:, 0] + 0.1 * rng.standard_normal(n)
    header = [f"f{j}" for j in range(d)] + [target]
    lines = [sep.join(header)] + [sep.join(repr(float(v)) for v in row) for row in np.column_stack([x, y])]
    path.write_text("\n".join(lines) + "\n")


def test_criterion_9_determinism(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    # stand-in tables with the expected shapes, so the real-data code path runs offline
    _write_stand_in(data / "yacht.csv", 308, 6, "Rr", False, 1)
    _write_stand_in(data / "winequality-red.csv", 1599, 11, "quality", True, 2, sep=";")
    cfg = tmp_path / "fast.yaml"
    cfg.write_text("k_range: [3, 4]\nmlp: {hidden_sizes: [8], steps: 20, thresholds: [0.25, 4.0]}\n")
    runs = {
        "linear-multi": ["--cases", "FEU", "PES", "--trials", "2", "--methods", "erm", "cglearn", "irmv1"],
        "linear-single": ["--cases", "FOU", "PES", "--batches", "3", "5", "--trials", "2"],
        "two-feature-demo": ["--trials", "3"],
        "gradcheck": [],
        "real-regression": ["--config", str(cfg), "--dataset", "yacht", "--data-dir", str(data), "--trials", "2"],
        "real-classification": ["--config", str(cfg), "--dataset", "wine-red", "--data-dir", str(data),
                                "--trials", "2"],
    }
    identical = []
    for scenario, extra in runs.items():
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{scenario}-{rep}"
            assert cli.main(["run", "--scenario", scenario, "--output", str(out), "--quiet", "--seed", "11",
                             *extra]) == 0
            blobs.append((out / "trials.jsonl").read_bytes())
        identical.append(blobs[0] == blobs[1] and len(blobs[0]) > 0)
    ok = all(identical)
    record_criterion(9, ok, f"{sum(identical)}/{len(identical)} scenarios byte-identical on rerun")
    assert ok
