import numpy as np
import pytest

from snnas import kernels

# one summary line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["compiled", "python"])
def backend(request):
    """Run a test under each kernel backend, restoring the default afterwards."""
    before = kernels.BACKEND
    try:
        kernels.use_backend(request.param)
    except ImportError:
        pytest.skip("compiled extension not built")
    yield request.param
    kernels.use_backend(before)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
