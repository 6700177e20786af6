"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest

from trellis.comm import launch

ACCEPTANCE_LINES: list[str] = []


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def on_ranks(P, fn, *args):
    """Run ``fn(comm, *args)`` on ``P`` simulated ranks; results by rank."""
    return launch(P, fn, *args)
