"""Command-line experiment runner.

    cglearn run --scenario linear-multi --trials 50 --output results/fig3
    cglearn run --scenario linear-single --batches 3 5
    cglearn run --scenario real-regression --dataset boston --data-dir data/
    cglearn run --scenario gradcheck
    cglearn run --config experiment.yaml --trials 5      # flags override the file

Each run writes ``trials.jsonl`` (one line per trial and method), ``summary.csv``
and ``manifest.json`` (the resolved config plus a timestamp) to ``--output``.
"""

from __future__ import annotations

import argparse
import csv
import functools
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import yaml

from . import experiments, gradcheck
from .data_io import BUNDLED_SPECS, DataLoadError, load_csv
from .datasets import Task
from .envcluster import ClusteringError, build_environments
from .lingrad import TrainConfig, TrainingDivergence
from .mlp import MlpTrainConfig
from .synthgen import CASE_CODES, ConfigError

log = logging.getLogger("cglearn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 2, 3, 4, 5

SCENARIOS = ("linear-multi", "linear-single", "real-regression", "real-classification",
             "two-feature-demo", "gradcheck")
DEFAULT_DATASETS = {"real-regression": ("boston", "yacht"),
                    "real-classification": ("wine-red", "wine-white")}


@dataclass
class ExperimentConfig:
    scenario: str = "linear-multi"
    cases: list[str] = field(default_factory=lambda: list(CASE_CODES))
    methods: list[str] = field(default_factory=lambda: ["erm", "cglearn"])
    trials: int = 10
    seed: int = 0
    threshold: float | None = None
    batches: list[int] = field(default_factory=lambda: [3, 5])
    datasets: list[str] = field(default_factory=list)
    data_dir: str | None = None
    k_range: list[int] = field(default_factory=lambda: [3, 10])
    output: str = "results"
    jobs: int = 1
    quiet: bool = False
    train: dict = field(default_factory=dict)   # TrainConfig overrides (linear scenarios)
    mlp: dict = field(default_factory=dict)     # MlpTrainConfig overrides (real-data scenarios)
    sem: dict = field(default_factory=dict)     # SemConfig overrides
    irm_penalties: list[float] = field(default_factory=lambda: list(experiments.IRM_PENALTIES))

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        bad = [c for c in self.cases if c.upper() not in CASE_CODES]
        if bad:
            raise ConfigError(f"unknown cases {bad}")
        self.cases = [c.upper() for c in self.cases]
        allowed = {"erm", "cglearn", "irmv1"} if self.scenario.startswith(("linear", "two")) else {"erm", "cglearn"}
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise ConfigError(f"methods {bad} are not available for {self.scenario}")
        if any(b < 2 for b in self.batches):
            raise ConfigError("batch counts must be at least 2")
        if self.threshold is not None and self.threshold < 0:
            raise ConfigError("threshold must be nonnegative")
        for name in self.datasets:
            if name not in BUNDLED_SPECS:
                raise ConfigError(f"unknown dataset {name!r}; choose from {sorted(BUNDLED_SPECS)}")
        try:
            self.train_config()
            self.mlp_config(Task.REGRESSION)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        opts = dict(self.train)
        if self.threshold is not None:
            opts["threshold"] = self.threshold
        return TrainConfig(**opts)

    def mlp_config(self, task: Task) -> MlpTrainConfig:
        opts = {"loss": "cross_entropy" if task is Task.CLASSIFICATION else "mse", **self.mlp}
        if self.threshold is not None:
            opts["threshold"] = self.threshold
        if "hidden_sizes" in opts:
            opts["hidden_sizes"] = tuple(opts["hidden_sizes"])
        return MlpTrainConfig(**opts)


def load_config_file(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cglearn", description="Gradient-consistency learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment scenario")
    run.add_argument("--scenario", choices=SCENARIOS)
    run.add_argument("--config", help="YAML or JSON file with ExperimentConfig fields")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--methods", nargs="+")
    run.add_argument("--cases", nargs="+", help="SEM case codes such as FEU PES")
    run.add_argument("--threshold", type=float, help="fixed threshold instead of validation selection")
    run.add_argument("--batches", type=int, nargs="+")
    run.add_argument("--dataset", dest="datasets", nargs="+")
    run.add_argument("--data-dir")
    run.add_argument("--output")
    run.add_argument("--jobs", type=int, help="worker processes (default: available CPUs)")
    run.add_argument("--quiet", action="store_true", default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    opts = load_config_file(args.config) if args.config else {}
    for name in ("scenario", "trials", "seed", "methods", "cases", "threshold", "batches",
                 "datasets", "data_dir", "output", "jobs", "quiet"):
        value = getattr(args, name, None)
        if value is not None:
            opts[name] = value
    opts.setdefault("jobs", experiments.default_jobs())
    try:
        cfg = ExperimentConfig(**opts)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


# -- scenarios ------------------------------------------------------------------

def _linear_rows(cfg: ExperimentConfig) -> list[dict]:
    train = cfg.train_config()
    rows = []
    if cfg.scenario == "linear-multi":
        for case in cfg.cases:
            fn = functools.partial(_multi, case, cfg.seed, tuple(cfg.methods), train, cfg.sem, tuple(cfg.irm_penalties))
            rows += experiments.run_trials(fn, cfg.trials, cfg.jobs)
            log.info("finished %s", case)
    elif cfg.scenario == "linear-single":
        for b in cfg.batches:
            for case in cfg.cases:
                fn = functools.partial(_single, case, cfg.seed, b, tuple(cfg.methods), train, cfg.sem,
                                       tuple(cfg.irm_penalties))
                rows += experiments.run_trials(fn, cfg.trials, cfg.jobs)
                log.info("finished %s with %d batches", case, b)
    else:
        fn = functools.partial(_demo, cfg.seed, tuple(cfg.methods), train, tuple(cfg.irm_penalties))
        rows += experiments.run_trials(fn, cfg.trials, cfg.jobs)
    return rows


# module-level wrappers so the process pool can pickle them
def _multi(case, seed, methods, train, sem, pen, trial):
    return experiments.linear_multi_trial(case, trial, seed, methods, train, sem, pen)


def _single(case, seed, b, methods, train, sem, pen, trial):
    return experiments.linear_single_trial(case, trial, seed, b, methods, train, sem, pen)


def _demo(seed, methods, train, pen, trial):
    return experiments.demo_trial(trial, seed, methods, train, irm_penalties=pen)


def _real(envs, name, scenario, seed, methods, config, trial):
    return experiments.real_trial(envs, name, scenario, trial, seed, methods, config)


def _real_rows(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for name in cfg.datasets or DEFAULT_DATASETS[cfg.scenario]:
        spec = BUNDLED_SPECS[name].resolve(cfg.data_dir)
        want = Task.REGRESSION if cfg.scenario == "real-regression" else Task.CLASSIFICATION
        if spec.task is not want:
            raise ConfigError(f"dataset {name} is a {spec.task.value} task, not {want.value}")
        data = load_csv(spec).dataset
        envs, clusters = build_environments(data, tuple(cfg.k_range), seed=cfg.seed)
        log.info("%s: %d environments (silhouette %.3f)", name, clusters.k, clusters.silhouette)
        fn = functools.partial(_real, envs, name, cfg.scenario, cfg.seed, tuple(cfg.methods),
                               cfg.mlp_config(want))
        for row in experiments.run_trials(fn, cfg.trials, cfg.jobs):
            row["n_envs"] = clusters.k
            rows.append(row)
    return rows


def _gradcheck_rows(cfg: ExperimentConfig) -> list[dict]:
    results = gradcheck.check_linear(50, cfg.seed) + gradcheck.check_mlp(50, cfg.seed)
    return [{"scenario": "gradcheck", "case": r.kind, "method": "analytic", "trial": r.instance,
             "rel_error": r.rel_error, "tolerance": r.tolerance, "passed": r.passed} for r in results]


def summary_csv(summary: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=experiments.SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in summary:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def format_table(summary: Sequence[dict]) -> str:
    head = f"{'case':<12} {'method':<8} {'metric':<16} {'mean':>10} {'std':>10} {'p_vs_erm':>10} sig"
    lines = [head, "-" * len(head)]
    for r in summary:
        p = f"{r['p_vs_erm']:.3g}" if isinstance(r["p_vs_erm"], float) else ""
        sig = "*" if r["significant"] is True else ""
        lines.append(f"{r['case']:<12} {r['method']:<8} {r['metric']:<16} {r['mean']:>10.4f} "
                     f"{r['std']:>10.4f} {p:>10} {sig}")
    return "\n".join(lines)


def execute(cfg: ExperimentConfig) -> tuple[int, list[dict]]:
    if cfg.scenario in ("linear-multi", "linear-single", "two-feature-demo"):
        rows = _linear_rows(cfg)
    elif cfg.scenario.startswith("real"):
        rows = _real_rows(cfg)
    else:
        rows = _gradcheck_rows(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.jsonl").write_text(experiments.rows_to_jsonl(rows), encoding="utf-8")
    summary = experiments.summarize(rows)
    (out / "summary.csv").write_text(summary_csv(summary), encoding="utf-8")
    manifest = {"created": time.strftime("%Y-%m-%dT%H:%M:%S"), "config": asdict(cfg)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    if not cfg.quiet:
        print(format_table(summary))
    if cfg.scenario == "gradcheck" and not all(r["passed"] for r in rows):
        return EXIT_CHECK_FAILED, rows
    return EXIT_OK, rows


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError, yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, _ = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataLoadError, ClusteringError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return code


if __name__ == "__main__":
    sys.exit(main())
