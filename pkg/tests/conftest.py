import numpy as np
import pytest

import singflow as sf


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def lin():
    return sf.linear_field(np.diag([-1.0, 2.0]))


@pytest.fixture(scope="session")
def lor():
    return sf.lorenz()


@pytest.fixture(scope="session")
def vdp():
    return sf.van_der_pol()


@pytest.fixture(scope="session")
def hopf():
    return sf.hopf()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
