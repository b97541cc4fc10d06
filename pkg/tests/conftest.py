import re

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_ac(\d+)_(\w+)", report.nodeid)
    if not match:
        return
    key = (int(match.group(1)), match.group(2))
    if report.when == "call" or report.failed:
        _ACCEPTANCE[key] = "PASS" if report.passed and not _ACCEPTANCE.get(key) == "FAIL" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), status in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"AC{num:<3} {status}  {name.replace('_', ' ')}")
