import math

import pytest
from hypothesis import settings

from ioncool.design import PhysicalConstraints, solve_boundaries
from ioncool.units import parse_quantity

settings.register_profile("ioncool", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("ioncool")

BETA_MAX = parse_quantity("0.85e-3 N/m^3", "quartic")
M_CA = 39.96


def make_design(d_in_over_dc=1.1, beta_mult=1.0, d0_over_dc=5.0):
    return solve_boundaries(PhysicalConstraints.from_ratios(BETA_MAX * beta_mult, d0_over_dc, d_in_over_dc, M_CA))


@pytest.fixture(scope="session")
def design():
    return make_design()


@pytest.fixture(scope="session")
def two_pi():
    return 2 * math.pi


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for res in sorted(RESULTS, key=lambda r: r.number):
        terminalreporter.write_line(res.line())
