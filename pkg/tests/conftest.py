"""Collects acceptance-criterion outcomes and prints one summary line per criterion."""

import pytest

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and not (report.failed or report.skipped)):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "states": [], "details": []})
    entry["states"].append("fail" if report.failed else "skip" if report.skipped else "pass")
    if report.when == "call":
        entry["details"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        states = entry["states"]
        verdict = "FAIL" if "fail" in states else "SKIP" if all(s == "skip" for s in states) else "PASS"
        if verdict == "PASS" and "skip" in states:
            verdict += f", {states.count('skip')} skipped"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {number} [{verdict}] {entry['title']}" + (f" :: {detail}" if detail else ""))
