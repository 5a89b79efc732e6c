import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage: ``criterion(3, "lineage sweep", detail)`` once the checks ran; a
    test that fails before recording is reported as FAIL by the hook below.
    """
    results = request.config.stash[_RESULTS]
    name = request.node.name

    def record(number, title, detail=""):
        results[name] = (number, title, detail)

    yield record


def pytest_runtest_makereport(item, call):
    if call.when != "call" or "criterion" not in getattr(item, "fixturenames", ()):
        return
    results = item.config.stash[_RESULTS]
    number = item.get_closest_marker("acceptance")
    entry = results.get(item.name)
    if entry is None and number is not None:
        entry = (number.args[0], number.args[1], "")
    if entry is None:
        return
    status = "PASS" if call.excinfo is None else "FAIL"
    detail = entry[2] if call.excinfo is None else str(call.excinfo.value).splitlines()[0][:120]
    line = f"{status} criterion {entry[0]}: {entry[1]}" + (f" ({detail})" if detail else "")
    results[item.name] = line


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(
        (v for v in config.stash[_RESULTS].values() if isinstance(v, str)),
        key=lambda s: int(s.split("criterion ")[1].split(":")[0]),
    )
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
