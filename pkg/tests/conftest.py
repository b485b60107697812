import pytest

_acceptance: dict[str, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    name = mark.args[0]
    entry = _acceptance.setdefault(name, [True, 0.0, ""])
    if report.failed:
        entry[0] = False
        crash = getattr(report.longrepr, "reprcrash", None)
        why = crash.message if crash else str(report.longrepr).strip()
        entry[2] = why.splitlines()[0][:200]
    if report.when == "call":
        entry[1] += report.duration


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, secs, why) in _acceptance.items():
        line = f"{'PASS' if ok else 'FAIL'}  {name}  ({secs:.1f} s)"
        if not ok:
            line += f"  -- {why}"
        terminalreporter.write_line(line)
