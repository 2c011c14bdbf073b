import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion of the build")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    key = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = getattr(item, "acceptance_detail", "")
        _results[key] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), (status, detail) in sorted(_results.items()):
        line = f"[{status}] {num:>2}. {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
