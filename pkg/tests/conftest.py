import numpy as np
import pytest

from cglearn.datasets import EnvironmentSet, TabularDataset


def make_envs(rng, m=3, n=50, d=3, weights=None, noise=0.1, scales=None):
    w = rng.standard_normal(d) if weights is None else np.asarray(weights, dtype=float)
    envs = []
    for i in range(m):
        s = 1.0 if scales is None else scales[i]
        x = rng.standard_normal((n, d)) * s
        envs.append(TabularDataset(x, x @ w + noise * rng.standard_normal(n)))
    return EnvironmentSet(tuple(envs))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed after the test report
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool | None, detail: str):
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    CRITERIA[number] = f"criterion {number}: {status}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
