import numpy as np
import pytest

from fracfucik.energy import sobolev_constant
from fracfucik.fucik import FucikModel
from fracfucik.mesh import MeshConfig
from fracfucik.operator import assemble
from fracfucik.spectrum import eigensolve


@pytest.fixture(scope="session")
def op_small():
    """s = 0.4 on (-1, 1) with 32 cells: cheap Fucik computations."""
    return assemble(MeshConfig(dim=1, extent=((-1.0, 1.0),), n_cells=32, s=0.4))


@pytest.fixture(scope="session")
def dec_small(op_small):
    return eigensolve(op_small)


@pytest.fixture(scope="session")
def model2(dec_small):
    return FucikModel(dec_small, 2)


@pytest.fixture(scope="session")
def model3(dec_small):
    return FucikModel(dec_small, 3)


@pytest.fixture(scope="session")
def op_crit():
    """s = 0.2 on (-1, 1) with 128 cells: critical-growth tests."""
    return assemble(MeshConfig(dim=1, extent=((-1.0, 1.0),), n_cells=128, s=0.2))


@pytest.fixture(scope="session")
def dec_crit(op_crit):
    return eigensolve(op_crit)


@pytest.fixture(scope="session")
def sob_crit(op_crit):
    return sobolev_constant(op_crit)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion for the terminal report."""
    lines = getattr(request.config, "_acceptance_lines", None)
    if lines is None:
        lines = request.config._acceptance_lines = []
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
