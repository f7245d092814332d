import math

import numpy as np
import pytest

from crossover_ci.optimize import TABLE1_OMEGAS, OptConfig, omega_table
from crossover_ci.splines import IntervalFunctions, KnotGrid
from crossover_ci.validation import critical_value

RT = math.sqrt(3.0) / 2.0
C05 = critical_value(0.05)

_ACCEPTANCE_LINES = []


def record(line):
    _ACCEPTANCE_LINES.append(line)
    print(line)


HEAVY_FIXTURES = {"table1_rows", "optimized", "scan_rows"}


def pytest_collection_modifyitems(items):
    for item in items:
        if HEAVY_FIXTURES & set(getattr(item, "fixturenames", ())) or "test_acceptance" in item.nodeid:
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def knots():
    return KnotGrid.uniform(6.0, 9)


@pytest.fixture(scope="session")
def standard_f(knots):
    return IntervalFunctions.standard(knots)


@pytest.fixture(scope="session")
def table1_rows():
    rows = omega_table(OptConfig(), TABLE1_OMEGAS)
    return {row.omega: row for row in rows}


@pytest.fixture(scope="session")
def optimized(table1_rows):
    """The omega = 0.2 solution for rho_tilde = sqrt(3)/2."""
    return table1_rows[0.2].result


def random_functions(knots, rng, n):
    out = []
    for _ in range(n):
        b = rng.uniform(-1.0, 1.0, knots.q - 2)
        s = rng.uniform(0.5, 3.0, knots.q - 1)
        out.append(IntervalFunctions(knots, tuple(b), tuple(s)))
    return out


@pytest.fixture(scope="session")
def scan_rows():
    from crossover_ci.compare import ComparisonSpec, scan_designs

    return scan_designs(ComparisonSpec())
