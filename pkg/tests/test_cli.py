import csv
import json

import numpy as np
import pytest

from cglearn import cli, experiments, gradcheck
from cglearn.evalharness import mean_std


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = cli.main(["run", "--output", str(out), "--jobs", "1", "--quiet", *args])
    return code, out


def test_demo_run_writes_result_files(tmp_path):
    code, out = run(tmp_path, "--scenario", "two-feature-demo", "--trials", "3")
    assert code == 0
    rows = [json.loads(line) for line in (out / "trials.jsonl").read_text().splitlines()]
    assert len(rows) == 6 and {r["method"] for r in rows} == {"erm", "cglearn"}
    with (out / "summary.csv").open() as fh:
        summary = list(csv.DictReader(fh))
    assert tuple(summary[0]) == experiments.SUMMARY_COLUMNS
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["scenario"] == "two-feature-demo" and "created" in manifest


def test_summary_recomputable_from_trials(tmp_path):
    code, out = run(tmp_path, "--scenario", "linear-multi", "--cases", "FOU", "PES", "--trials", "3",
                    "--methods", "erm", "cglearn", "irmv1")
    assert code == 0
    rows = [json.loads(line) for line in (out / "trials.jsonl").read_text().splitlines()]
    with (out / "summary.csv").open() as fh:
        for s in csv.DictReader(fh):
            vals = [r[s["metric"]] for r in rows if r["case"] == s["case"] and r["method"] == s["method"]]
            mean, std = mean_std(vals)
            assert float(s["mean"]) == mean and float(s["std"]) == std and int(s["n"]) == len(vals)


def test_reruns_are_byte_identical(tmp_path):
    args = ("--scenario", "linear-single", "--cases", "FEU", "--batches", "3", "5", "--trials", "2")
    _, a = run(tmp_path, *args, name="a")
    _, b = run(tmp_path, *args, name="b")
    for f in ("trials.jsonl", "summary.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_worker_pool_keeps_trial_order(tmp_path):
    code, a = run(tmp_path, "--scenario", "two-feature-demo", "--trials", "3", name="a")
    out = tmp_path / "b"
    assert cli.main(["run", "--scenario", "two-feature-demo", "--trials", "3", "--jobs", "2",
                     "--output", str(out), "--quiet"]) == 0
    assert (a / "trials.jsonl").read_bytes() == (out / "trials.jsonl").read_bytes()


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("scenario: two-feature-demo\ntrials: 5\nseed: 4\ntrain:\n  steps: 200\n")
    code, out = run(tmp_path, "--config", str(cfg), "--trials", "2")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["trials"] == 2 and manifest["config"]["seed"] == 4
    assert manifest["config"]["train"] == {"steps": 200}


def test_fixed_threshold_flag(tmp_path):
    code, out = run(tmp_path, "--scenario", "two-feature-demo", "--trials", "2", "--threshold", "16")
    rows = [json.loads(line) for line in (out / "trials.jsonl").read_text().splitlines()]
    assert code == 0 and all(r["threshold"] == 16.0 for r in rows if r["method"] == "cglearn")


@pytest.mark.parametrize("text", ["trials: 0\n", "bogus_key: 1\n", "cases: [XYZ]\n", "- a list\n",
                                  "scenario: gradcheck\ntrain: {loss: hinge}\n",
                                  "scenario: real-regression\nmethods: [irmv1]\n"])
def test_config_errors_exit_2(tmp_path, text):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(text)
    assert run(tmp_path, "--config", str(cfg))[0] == cli.EXIT_CONFIG


def test_missing_config_file_exits_2(tmp_path):
    assert run(tmp_path, "--config", str(tmp_path / "nope.json"))[0] == cli.EXIT_CONFIG


def test_missing_data_exits_3(tmp_path):
    code, _ = run(tmp_path, "--scenario", "real-regression", "--dataset", "boston", "--data-dir", str(tmp_path))
    assert code == cli.EXIT_DATA


def test_wrong_task_dataset_exits_2(tmp_path):
    code, _ = run(tmp_path, "--scenario", "real-regression", "--dataset", "wine-red")
    assert code == cli.EXIT_CONFIG


def test_divergence_exits_4(tmp_path):
    cfg = tmp_path / "hot.json"
    cfg.write_text(json.dumps({"scenario": "two-feature-demo", "train": {"learning_rate": 100.0}}))
    assert run(tmp_path, "--config", str(cfg), "--trials", "1")[0] == cli.EXIT_DIVERGED


def test_gradcheck_exit_codes(tmp_path, monkeypatch):
    code, out = run(tmp_path, "--scenario", "gradcheck")
    assert code == 0
    assert len((out / "trials.jsonl").read_text().splitlines()) == 100
    bad = gradcheck.GradCheck("linear", 0, 1.0, 1e-6)
    monkeypatch.setattr(gradcheck, "check_linear", lambda n, seed: [bad])
    assert run(tmp_path, "--scenario", "gradcheck", name="bad")[0] == cli.EXIT_CHECK_FAILED


def test_real_regression_end_to_end(tmp_path):
    # synthetic stand-in with the Boston layout: 506 rows, 13 features plus MEDV
    rng = np.random.default_rng(0)
    x = rng.standard_normal((506, 13)) + np.repeat(rng.normal(0, 4, (3, 13)), [170, 168, 168], axis=0)
    y = x[:, 0] * 2 + x[:, 1] + rng.standard_normal(506) + 20
    header = [f"c{j}" for j in range(13)] + ["MEDV"]
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in row) for row in np.column_stack([x, y])]
    (tmp_path / "boston.csv").write_text("\n".join(lines) + "\n")
    cfg = tmp_path / "real.yaml"
    cfg.write_text("k_range: [3, 4]\nmlp:\n  hidden_sizes: [8]\n  steps: 30\n  thresholds: [0.25, 4.0]\n")
    code, out = run(tmp_path, "--config", str(cfg), "--scenario", "real-regression", "--dataset", "boston",
                    "--data-dir", str(tmp_path), "--trials", "2")
    assert code == 0
    rows = [json.loads(line) for line in (out / "trials.jsonl").read_text().splitlines()]
    assert {r["method"] for r in rows} == {"erm", "cglearn"}
    assert all(r["n_envs"] == 3 and len(r["folds"]) == 3 for r in rows)
    assert all(r["rmse_test"] > 0 for r in rows)


def test_format_table_lists_every_row():
    rows = experiments.summarize(experiments.demo_trial(0, 0) + experiments.demo_trial(1, 0))
    table = cli.format_table(rows)
    assert len(table.splitlines()) == len(rows) + 2
