"""Acceptance reporting: one PASS/FAIL line per numbered criterion."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        if report.failed:
            msg = str(report.longrepr).strip().splitlines()
            detail = (detail + "; " if detail else "") + (msg[-1] if msg else "failed")
        state = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        prev = _RESULTS.get(number)
        if prev is None or prev[1] == "PASS":
            _RESULTS[number] = (title, state, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, state, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {title}: {state}" + (f" ({detail})" if detail else ""))
