import numpy as np
import pytest

from llns.basis import Basis, build_table


@pytest.fixture(scope="session")
def basis2():
    return Basis.galerkin(2)


@pytest.fixture(scope="session")
def table2(basis2):
    return build_table(basis2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_field_coeffs(basis, rng, scale=1.0, with_constants=True):
    c = scale * rng.standard_normal(len(basis))
    if not with_constants:
        c[~basis.is_wave] = 0.0
    return c


# acceptance lines collected by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
