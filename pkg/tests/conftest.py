import numpy as np
import pytest
from hypothesis import settings

from geoloc.store import open_store, write_store_arrays

settings.register_profile("ci", deadline=None, max_examples=100)
settings.register_profile("fast", deadline=None, max_examples=10)
settings.load_profile("ci")


@pytest.fixture
def make_store(tmp_path):
    """Write column arrays to a fresh store file and open it."""
    counter = iter(range(10_000))

    def _make(lats, lons, vectors=None, ids=None, dim=4, seed=0):
        n = len(lats)
        if vectors is None:
            vectors = np.random.default_rng(seed).standard_normal((n, dim)).astype(np.float32)
        if ids is None:
            ids = np.arange(n)
        path = tmp_path / f"store_{next(counter)}.gpr"
        write_store_arrays(path, ids, lats, lons, vectors)
        return open_store(path)

    return _make


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
