import numpy as np
import pytest

from oqmla import data
from oqmla.models import Term


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def decay_dataset():
    """Single-qubit amplitude damping at rate 0.2 on a log grid."""
    true = data.TrueModel(1, (Term("-", "dissipative", 0.2),))
    return data.generate_dataset(true, data.log_time_grid(0.01, 35.0, 400), 2000,
                                 seed=7, designs_per_time=2)


_REPORT_LINES = []


@pytest.fixture
def report_line():
    """Collects summary lines printed at the end of the session."""

    def add(line):
        _REPORT_LINES.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT_LINES:
            terminalreporter.write_line(line)
