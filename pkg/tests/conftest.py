"""Shared test plumbing.

The acceptance tests record one verdict line each; echoing them in the
terminal summary keeps the pass/fail table visible even though pytest
captures per-test stdout.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
