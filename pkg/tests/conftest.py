import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile("default")


def rel_err(analytic, numeric, floor=1e-3):
    """Entry-wise relative error; ``floor`` keeps near-zero entries from
    amplifying the ~1e-10 rounding noise of a 1e-6 central difference."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_diff(fn, vec, step=1e-6):
    vec = np.asarray(vec, dtype=float)
    out = np.empty_like(vec)
    for i in range(vec.size):
        e = np.zeros_like(vec)
        e[i] = step
        out[i] = (fn(vec + e) - fn(vec - e)) / (2 * step)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20190527)


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` prints one PASS/FAIL line and asserts."""

    def report(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" | {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
