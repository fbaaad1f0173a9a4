"""Shared fixtures and the per-criterion acceptance report.

Acceptance tests carry ``@pytest.mark.criterion(n, "title")``; a criterion
passes when every test tagged with it passes. The report is printed at the
end of the session, one line per criterion.
"""
from __future__ import annotations

import numpy as np
import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion tag")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            n, title = mark.args
            _RESULTS.setdefault(n, {"title": title, "outcomes": [], "metrics": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _RESULTS[mark.args[0]]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["outcomes"].append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        entry = _RESULTS[n]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for _, o in outcomes):
            status = "PASS"
        elif any(o == "failed" for _, o in outcomes):
            status = "FAIL"
        else:
            status = "SKIPPED"
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {entry['title']} "
                                    f"({len(outcomes)} tests)")
        for line in entry["metrics"]:
            terminalreporter.write_line(f"      {line}")


@pytest.fixture
def metric(request):
    """``metric("text")`` attaches a measured value to the test's criterion line."""
    mark = request.node.get_closest_marker("criterion")

    def record(text: str):
        if mark is not None:
            _RESULTS[mark.args[0]]["metrics"].append(text)
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.random(random_state=rng).as_matrix()
