import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria = {}
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "slow: takes tens of seconds")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criteria[item.nodeid] = (m.args[0], m.args[1])


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    prev = _outcomes.get(report.nodeid, "PASS")
    if report.skipped:
        _outcomes[report.nodeid] = "SKIP"
    elif report.failed:
        _outcomes[report.nodeid] = "FAIL"
    elif report.when == "call":
        _outcomes[report.nodeid] = prev


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    by_number = {}
    for nodeid, (num, title) in _criteria.items():
        if nodeid in _outcomes:
            status = _outcomes[nodeid]
            cur = by_number.get(num, (title, "PASS"))
            rank = {"PASS": 0, "SKIP": 1, "FAIL": 2}
            worst = status if rank[status] > rank[cur[1]] else cur[1]
            by_number[num] = (title, worst)
    terminalreporter.section("acceptance criteria")
    for num in sorted(by_number):
        title, status = by_number[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {title}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
