"""Shared test plumbing: surface acceptance verdict lines in the summary.

Captured stdout of passing tests is normally swallowed; the acceptance
suite records one verdict line per criterion here and the terminal
summary hook replays them after the run, pass or fail.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
