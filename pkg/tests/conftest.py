import pytest

_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")
    config.stash[_LINES] = {}


@pytest.fixture
def detail(request):
    """List of strings appended to the criterion's pass/fail line."""
    notes = []
    request.node.user_properties.append(("detail", notes))
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    notes = [n for key, val in item.user_properties if key == "detail" for n in val]
    if rep.failed:
        msg = str(call.excinfo.value).strip().splitlines()
        notes.append(f"error: {msg[0] if msg else call.excinfo.typename}")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    line = f"[criterion {number:>2}] {status}  {title}" + (f"  ({'; '.join(notes)})" if notes else "")
    item.config.stash[_LINES][number] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
