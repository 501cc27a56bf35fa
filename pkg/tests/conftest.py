import re

_results = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    failed = report.failed
    if report.when == "call" or failed:
        prev = _results.get(num)
        detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        if prev is None or failed:
            _results[num] = ("FAIL" if failed else ("SKIP" if report.skipped else "PASS"), detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        status, detail = _results[num]
        terminalreporter.write_line(f"criterion {num}: {status}" + (f"  ({detail})" if detail else ""))
