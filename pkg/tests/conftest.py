"""Acceptance reporting: one PASS/FAIL line per criterion at the end of the session."""

import pytest

_RESULTS: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    failed = report.failed
    if report.when == "call" or (report.when == "setup" and failed):
        entry = _RESULTS.setdefault(n, [title, True, ""])
        entry[1] = entry[1] and not failed
        if detail:
            entry[2] = detail
        if failed and not entry[2]:
            entry[2] = (report.longreprtext.strip().splitlines() or [""])[-1][:160]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
