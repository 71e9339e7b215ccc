import numpy as np
import pytest

# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict[int, str] = {}


def record(number: int, passed: bool, detail: str) -> bool:
    CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
