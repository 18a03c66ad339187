from __future__ import annotations

import time

import pytest
from hypothesis import HealthCheck, settings

from lpbf_tf import datastore, oracle

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=40,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def _simulate(tmp_root, tag: str, side: float):
    t0 = time.perf_counter()
    res = oracle.simulate_fd(oracle.GeometryMaterialSpec(part_side=side), oracle.ProcessSpec(), dt=0.1)
    elapsed = time.perf_counter() - t0
    path = oracle.export_dataset(res, tmp_root, 10.0, tag)
    return datastore.ingest(path), res, elapsed


@pytest.fixture(scope="session")
def oracle_root(tmp_path_factory):
    return tmp_path_factory.mktemp("oracle")


@pytest.fixture(scope="session")
def dataset3_run(oracle_root):
    """0.4 mm cube, 10 layers: (Dataset, FdResult, simulation seconds)."""
    return _simulate(oracle_root, "dataset3", 0.4e-3)


@pytest.fixture(scope="session")
def dataset3(dataset3_run):
    return dataset3_run[0]


@pytest.fixture(scope="session")
def dataset1_run(oracle_root):
    """0.2 mm cube, 10 layers."""
    return _simulate(oracle_root, "dataset1", 0.2e-3)


@pytest.fixture(scope="session")
def dataset1(dataset1_run):
    return dataset1_run[0]
