import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance criteria register "n: PASS/FAIL detail" lines here
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, n=None, floor=0.1):
    shape = () if n is None else (n,)
    a = rng.standard_normal((*shape, d, 2 * d)) / np.sqrt(2 * d)
    return a @ np.swapaxes(a, -1, -2) + floor * np.eye(d)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
