import numpy as np
import pytest

from rfbsde.geometry import interval
from rfbsde.paths import TimeGrid

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def unit():
    return interval()


@pytest.fixture
def small_grid():
    return TimeGrid(0.5, 50, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
