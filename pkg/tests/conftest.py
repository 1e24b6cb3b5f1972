"""Shared pytest wiring for the suite.

The acceptance tests record one human-readable pass/fail line per criterion;
this hook replays those lines after the run so they reach the terminal (and
any log the run is teed into) even though pytest captures stdout by default.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
