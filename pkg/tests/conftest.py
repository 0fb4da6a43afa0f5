"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion.

A criterion may be checked by several tests. It passes only if every one of
them passes; an expected failure (xfail) counts as FAIL and is labelled so.
"""

import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")
    config.stash[_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    known = hasattr(report, "wasxfail")
    passed = report.outcome == "passed" and not known
    details = [str(v) for k, v in item.user_properties if k == "detail"]
    if known:
        details.append(f"known failure: {report.wasxfail}")
    entry = item.config.stash[_KEY].setdefault(marker.args[0], [True, []])
    entry[0] = entry[0] and passed
    entry[1].extend(details)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_KEY]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, details = results[number]
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}"
        terminalreporter.write_line(f"{line} ({'; '.join(details)})" if details else line)
