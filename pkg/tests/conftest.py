import sys

import pytest

from walllaw import cells
from walllaw.experiment import ExperimentPlan, run_experiment
from walllaw.geometry import cosine_profile


@pytest.fixture(scope="session")
def profile():
    return cosine_profile(0.05)


@pytest.fixture(scope="session")
def cell_pair(profile):
    return cells.solve_cells(profile, 10.0)


@pytest.fixture(scope="session")
def experiment(cell_pair):
    return run_experiment(ExperimentPlan(), cell_pair)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    rows = getattr(module, "RESULTS", None)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(rows):
        title, passed, detail = rows[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {number:2d} {title}: {detail}")
