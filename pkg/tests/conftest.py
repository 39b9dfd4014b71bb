import numpy as np
import pytest

from vrdrive import sim


@pytest.fixture(scope="session")
def track_a():
    t = sim.make_track("A")
    t.segment_field()
    return t


@pytest.fixture(scope="session")
def track_b():
    t = sim.make_track("B")
    t.segment_field()
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> summary line, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
