"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    row = _OUTCOMES.setdefault(number, {"title": title, "ok": True, "seen": False, "details": []})
    if report.when == "call" or report.failed:
        row["seen"] = True
        row["ok"] = row["ok"] and not report.failed
        row["details"] += [v for k, v in item.user_properties if k == "detail" and v not in row["details"]]


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        row = _OUTCOMES[number]
        status = "PASS" if row["ok"] and row["seen"] else "FAIL"
        detail = "; ".join(row["details"])
        terminalreporter.write_line(f"criterion {number:2d} {status}  {row['title']}" + (f"  [{detail}]" if detail else ""))
