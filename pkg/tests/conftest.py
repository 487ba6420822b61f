import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("detlab", max_examples=60, deadline=None, derandomize=True)
settings.load_profile("detlab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, lo=0.1, scale=1.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = lo + scale * rng.random(n)
    return (q * ev) @ q.T


def random_sym(rng, n, scale=1.0):
    a = scale * rng.standard_normal((n, n))
    return 0.5 * (a + a.T)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
