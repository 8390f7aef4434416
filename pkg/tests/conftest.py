"""Collects acceptance-criterion verdicts and prints one line per criterion at the end of the run."""

import pytest

VERDICTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    VERDICTS[marker.args[0]] = ("PASS" if rep.passed else "FAIL", marker.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        status, title, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}: {detail}")
