"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import pytest

_RESULTS = {}
_DETAILS = {}


@pytest.fixture
def criterion(request):
    """Record a one-line measurement for the acceptance summary."""
    key = request.node.nodeid

    def note(text):
        _DETAILS[key] = text

    return note


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _RESULTS.get(report.nodeid, "passed")
        _RESULTS[report.nodeid] = report.outcome if prev == "passed" else prev


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_RESULTS, key=lambda n: n.split("::")[-1]):
        name = nodeid.split("::")[-1][len("test_criterion_"):]
        num, _, label = name.partition("_")
        status = "PASS" if _RESULTS[nodeid] == "passed" else "FAIL"
        detail = _DETAILS.get(nodeid, "")
        terminalreporter.write_line(f"[{status}] {int(num):2d} {label.replace('_', ' ')}: {detail}")
