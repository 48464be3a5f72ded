from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spikecaps.data import split_paths

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DEFAULT_DATA_ROOT = Path("/root/data")


def mnist_root() -> Path | None:
    root = os.environ.get("SPIKECAPS_DATA_ROOT") or DEFAULT_DATA_ROOT
    try:
        split_paths(root, "mnist", "train")
        split_paths(root, "mnist", "test")
    except (FileNotFoundError, ValueError):
        return None
    return Path(root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_data_root():
    root = mnist_root()
    if root is None:
        pytest.skip("MNIST IDX files not found; set SPIKECAPS_DATA_ROOT")
    return root


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_report():
    """Append a one-line verdict; every line is echoed in the terminal summary."""

    def report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
