import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tclagg.grid import build_grid  # noqa: E402
from tclagg.physics import TclParams  # noqa: E402

# PASS/FAIL lines collected by test_acceptance and echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def params():
    return TclParams()


@pytest.fixture
def grid():
    """Default layout: 51 CVs per chain, 2 degC beyond a 19..21 degC deadband."""
    return build_grid(51, 19.0, 21.0, 17.0, 23.0)


@pytest.fixture
def small_grid():
    return build_grid(11, 19.0, 21.0, 17.0, 23.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
