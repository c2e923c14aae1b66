import numpy as np
import pytest

from molli_t1.rng import substream


@pytest.fixture
def rng():
    return substream(1234, "tests")


@pytest.fixture
def default_times():
    # sorted 5(3)3 times at a steady 60 bpm
    return np.array([100.0, 180.0, 1100.0, 1180.0, 2100.0, 2180.0, 3100.0, 4100.0])


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
