import numpy as np
import pytest

R2 = np.sqrt(2.0) / 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cross_mode_group():
    """Two fully valid single-hypothesis rollouts pointing at different events."""
    from scatterkit.rewards import ResponseGroup

    return ResponseGroup(([[1.0, 0.0]], [[0.0, 1.0]]), [[1.0, 0.0], [0.0, 1.0]], context_id="g2")


ACCEPTANCE = {}


def record_criterion(number, title, passed, detail=""):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=str):
            terminalreporter.write_line(ACCEPTANCE[key])
