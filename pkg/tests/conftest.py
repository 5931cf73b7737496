"""Collects one pass/fail line per acceptance criterion and prints them at the end of the run."""

import pytest

_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if report.outcome == "failed" and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        line = f"{verdict}  {marker.args[0]}"
        if detail:
            line += f"  [{detail}]"
        _LINES.append(line)
        print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
