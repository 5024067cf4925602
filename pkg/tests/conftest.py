"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

RESULTS = pytest.StashKey[dict]()
DETAILS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[RESULTS] = {}


@pytest.fixture
def report(request):
    """List of ``(label, value)`` measurements shown next to the criterion's verdict."""
    lines: list = []
    request.node.stash[DETAILS] = lines
    return lines


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    details = item.stash.get(DETAILS, [])
    text = "; ".join(f"{k}: {v}" for k, v in details)
    item.config.stash[RESULTS][number] = (title, "PASS" if rep.passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, verdict, text = results[number]
        line = f"criterion {number:2d} {verdict}: {title}"
        terminalreporter.write_line(line + (f" [{text}]" if text else ""))
