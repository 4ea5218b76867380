"""Shared pytest hooks.

Collects the outcome of every check in test_acceptance.py and prints a
one-line pass/fail summary per criterion at the end of the run, so the
acceptance verdict is readable even when per-test output is captured.
"""

import sys

import pytest

_acceptance: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if "test_acceptance.py" not in item.nodeid:
        return
    if rep.when == "call":
        _acceptance[item.name] = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    elif rep.when == "setup" and not rep.passed:
        _acceptance[item.name] = "SKIP" if rep.skipped else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance:
        return
    mod = sys.modules.get("test_acceptance")
    details = getattr(mod, "DETAILS", {}) if mod else {}
    terminalreporter.section("acceptance checks")
    for name in sorted(_acceptance):
        line = f"[{_acceptance[name]}] {name}"
        if name in details:
            line += f"  ({details[name]})"
        terminalreporter.write_line(line)
