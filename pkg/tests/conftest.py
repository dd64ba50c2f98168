import numpy as np
import pytest

from bald import _kernels
from bald.phantom import generate_phantom

BACKENDS = sorted(_kernels.BACKENDS)


@pytest.fixture(scope="session")
def clean_phantom():
    return generate_phantom()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


requires_ext = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


# one line per acceptance criterion, shown in the terminal summary
CRITERIA_LINES = []


def report_criterion(number, title, ok, detail=""):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    CRITERIA_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)
