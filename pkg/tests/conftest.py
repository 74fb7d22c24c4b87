import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


@pytest.fixture
def golden_dir():
    return GOLDEN


_acceptance = {}


def pytest_runtest_logreport(report):
    mark = getattr(report, "acceptance", None)
    if mark is None:
        return
    n, title = mark
    prev = _acceptance.get(n)
    failed = report.failed or (prev is not None and not prev[1])
    duration = report.duration + (prev[2] if prev else 0.0)
    _acceptance[n] = (title, not failed, duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().acceptance = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        title, ok, duration = _acceptance[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}  ({duration:.2f}s)")
