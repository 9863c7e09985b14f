import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("rtrecon", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rtrecon")


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar f at every entry of x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric, floor=1e-6):
    """Max abs error scaled by the largest gradient magnitude.

    The floor keeps exactly-zero true gradients (a bias feeding batch
    normalization) from turning rounding noise of ~1e-11 into a ratio of 1.
    """
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def acceptance_line(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
