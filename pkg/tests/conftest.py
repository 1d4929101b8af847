import numpy as np
import pytest

from vortexline.config import DEFAULT_OMEGA
from vortexline.nodal import trace_all_lines
from vortexline.wavefield import triple_superposition

T_SNAPSHOT = 4.0


@pytest.fixture(scope="session")
def spec():
    return triple_superposition(DEFAULT_OMEGA)


@pytest.fixture(scope="session")
def lines_t4(spec):
    return trace_all_lines(spec, T_SNAPSHOT)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
