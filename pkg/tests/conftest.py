import pytest

_RESULTS: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        verdict = "PASS" if report.passed else "FAIL"
        _RESULTS.append((marker.args[0], item.name, verdict, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, name, verdict, detail in sorted(_RESULTS):
        line = f"criterion {n}: {verdict}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
