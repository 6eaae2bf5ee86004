import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def random_table(rng, grid, n_max, support="x"):
    """Coefficient table with random interior values and a model-compatible terminal slice."""
    from polybsde.poly_table import CoefficientTable, entry_keys

    keys = entry_keys(n_max)
    values = rng.normal(size=(grid.n_nodes, len(keys)))
    for j, (n, i, k) in enumerate(keys):
        allowed = (i == n and k == 0) if support == "x" else (i + k == n)
        if not allowed:
            values[-1, j] = 0.0
    return CoefficientTable(grid, n_max, values, support)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records a PASS/FAIL line and fails the test when ``ok`` is false."""
    log = request.config.stash[_CRITERIA]

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        log[k] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_CRITERIA, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for k in sorted(log):
            terminalreporter.write_line(log[k])
