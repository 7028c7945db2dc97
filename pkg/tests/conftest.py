import numpy as np
import pytest

from nlazf.pa_model import PAArray, crandn

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str):
    line = f"[criterion {number}] {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)


def weak_pa(rng, M, a1=1.0, a3=-0.05, fraction=0.1):
    """Perturbed PA array in the weak-coupling regime used across the tests."""
    u = rng.uniform(-fraction, fraction, M)
    v = rng.uniform(-fraction, fraction, M)
    return PAArray.from_arrays(a1 * (1 + u), a3 * (1 + v))


def random_instance(rng, M=2, **kw):
    return crandn(rng, (2, M)), weak_pa(rng, M, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
