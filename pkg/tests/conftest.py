import pytest

from eland.potentials import double_well, pure_power


@pytest.fixture(scope="session")
def dw():
    return double_well()


@pytest.fixture(scope="session")
def pp3():
    return pure_power(3.0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
