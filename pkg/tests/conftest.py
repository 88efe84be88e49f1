import pytest

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args
    prev = _outcomes.get(key)
    if rep.failed:
        _outcomes[key] = "FAIL"
    elif rep.skipped and prev != "FAIL":
        _outcomes[key] = "SKIP"
    elif rep.when == "call" and prev is None:
        _outcomes[key] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name), verdict in sorted(_outcomes.items()):
        terminalreporter.write_line(f"criterion {number:2d} {verdict}: {name}")
