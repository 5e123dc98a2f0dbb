import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

from qmln.logic import parse_kb

sys.path.insert(0, os.path.dirname(__file__))

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def load(name: str):
    return parse_kb((DATA / name).read_text(encoding="utf-8"))


@pytest.fixture
def fix1():
    return load("fix1.mln")


@pytest.fixture
def fix2():
    return load("fix2.mln")


@pytest.fixture
def fix3():
    return load("fix3.mln")


# one PASS/FAIL line per acceptance criterion, printed after the run
_CRITERIA: dict[int, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.setdefault(marker.args[0], []).append(report.passed)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    from test_acceptance import TITLES

    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        results = _CRITERIA.get(n)
        if results is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} [{status}] {TITLES[n]}")
