import sys

import pytest

from optstop import lattice, pde
from optstop.model import gbm

PUT = "max(100 - x, 0)"


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def put_problem():
    return gbm(-0.06, 0.2, 1.0, PUT)


@pytest.fixture(scope="session")
def put_surface(put_problem):
    grid = pde.default_grid(put_problem, [100.0], 401, 400)
    return pde.solve_variational_inequality(put_problem, grid)


@pytest.fixture(scope="session")
def put_tree_5000(put_problem):
    return float(lattice.root_value(put_problem, 0.0, 100.0, 5000, "binomial"))
