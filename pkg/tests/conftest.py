import sys

import numpy as np
import pytest

from freqhom.spectral import FrequencyGrid, ResonatorSpec, build_ring_jsa
from helpers import LINEWIDTH


@pytest.fixture(scope="session")
def spec():
    return ResonatorSpec()


@pytest.fixture(scope="session")
def ring_jsa(spec):
    return build_ring_jsa(spec)


@pytest.fixture(scope="session")
def small_grid():
    # coarse but still resolved: 512 linewidths, 32 points per linewidth
    return FrequencyGrid.for_linewidth(LINEWIDTH, span_linewidths=512, n_points=2**14)


@pytest.fixture(scope="session")
def small_jsa(spec, small_grid):
    return build_ring_jsa(spec, small_grid)


@pytest.fixture(scope="session")
def tau_axis():
    step = 20e-12
    n = int(round(5 / LINEWIDTH / step)) + 1
    return np.arange(-n, n + 1) * step


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        terminalreporter.write_line("FAIL lines from strict xfail tests are known, documented failures")
        for line in lines:
            terminalreporter.write_line(line)
