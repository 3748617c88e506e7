import math

import numpy as np
import pytest

from nvnmr.core import DEFAULT_CONSTANTS

NV_AXIS = np.array([math.sin(DEFAULT_CONSTANTS.theta0), 0.0, math.cos(DEFAULT_CONSTANTS.theta0)])


def dipole_oracle_b2(r, gamma, constants=DEFAULT_CONSTANTS):
    """Squared NV-axis field of a precessing nucleus, from the vector dipole
    formula: two orthogonal moments of size hbar*gamma/2 transverse to the
    NV axis, field projected on the axis and squared-summed."""
    r = np.asarray(r, float)
    n = NV_AXIS
    e1 = np.array([math.cos(constants.theta0), 0.0, -math.sin(constants.theta0)])
    e2 = np.cross(n, e1)
    mu = constants.hbar * gamma / 2
    rn = np.linalg.norm(r)
    rhat = r / rn
    total = 0.0
    for e in (e1, e2):
        m = mu * e
        b = constants.mu0 / (4 * math.pi) * (3 * rhat * (m @ rhat) - m) / rn ** 3
        total += float(b @ n) ** 2
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
