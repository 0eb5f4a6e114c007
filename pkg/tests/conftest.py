import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from semspmm.convert import encode_matrix  # noqa: E402
from semspmm.scsr import TiledSparseMatrix, ValueKind  # noqa: E402
from semspmm.storage import MemoryStorage  # noqa: E402

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    num = getattr(report, "criterion", None)
    if num is None:
        return
    if report.when == "call" or report.outcome == "failed":
        prev = _ACCEPTANCE.get(num, ("passed", report.criterion_title))
        outcome = "failed" if "failed" in (prev[0], report.outcome) else report.outcome
        _ACCEPTANCE[num] = (outcome, report.criterion_title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion, rep.criterion_title = m.args


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        outcome, title = _ACCEPTANCE[num]
        tag = "PASS" if outcome == "passed" else "FAIL" if outcome == "failed" else outcome.upper()
        terminalreporter.write_line(f"criterion {num:2d}: {tag}  {title}")


def make_image(rows, cols, vals=None, *, shape, tile_size=256, value_kind=ValueKind.BINARY):
    return encode_matrix(rows, cols, vals, shape=shape, tile_size=tile_size, value_kind=value_kind)


def stored(blob, path="a.img", storage=None):
    storage = storage or MemoryStorage()
    storage.put(path, blob)
    return storage, path


@pytest.fixture
def mem_storage():
    return MemoryStorage()


@pytest.fixture
def toy():
    """The 3-edge toy: (0,1), (0,3), (5,2) in a 16x16 matrix with 16x16 tiles."""
    blob = encode_matrix([0, 0, 5], [1, 3, 2], shape=(16, 16), tile_size=16)
    return TiledSparseMatrix.from_bytes(blob)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
