import numpy as np
import pytest

from r3net import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def weighted_sum(out, seed=0):
    """Scalar probe ``sum(out * w)`` with fixed random ``w``; keeps gradients O(1)."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * T.Tensor(w)).sum()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    """Print and remember one acceptance verdict; the session summary repeats them."""
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
