import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    if rep.when == "call" or failed:
        detail = dict(item.user_properties).get("detail", "")
        prev = _RESULTS.get(n)
        if prev is None or prev[1]:
            _RESULTS[n] = (title, not failed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
