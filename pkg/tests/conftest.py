"""Shared pytest plumbing.

The acceptance tests record one verdict line per criterion here; the
terminal-summary hook replays them after capture is released, so a plain
``pytest -v`` run always ends with the full PASS/FAIL ledger regardless
of capture mode.
"""

CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)
