"""Pytest wiring: show the recorded acceptance lines after the run."""

from __future__ import annotations

import util


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if util.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in util.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
