"""Shared pytest hooks."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

# filled by test_acceptance.criterion(); printed once at the end of the session
CRITERIA_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA_RESULTS):
        terminalreporter.write_line(CRITERIA_RESULTS[n])
