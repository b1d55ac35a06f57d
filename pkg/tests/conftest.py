"""Shared paths plus a per-criterion summary for the acceptance suite."""

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_labels: dict[str, str] = {}
_results: dict[str, str] = {}


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance" in item.nodeid:
            doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
            _labels[item.nodeid] = doc


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call":
        _results[report.nodeid] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _results[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_results):
        word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            _results[nodeid], _results[nodeid].upper()
        )
        terminalreporter.write_line(f"{word}  {_labels.get(nodeid, nodeid)}")
