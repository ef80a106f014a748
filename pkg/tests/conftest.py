import numpy as np
import pytest

from fedgmm.bounds import BoundContext


@pytest.fixture(scope="session")
def ctx3():
    return BoundContext.for_delta(3.0)


@pytest.fixture(scope="session")
def ctx2():
    return BoundContext.for_delta(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
