"""Shared pytest plumbing: the acceptance report lines.

Acceptance tests register one PASS/FAIL line each; they are replayed in
the terminal summary so the verdict per criterion is visible in plain
``pytest`` output (capture hides in-test prints for passing tests).
"""

ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES.append(
        f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'} — {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES,
                       key=lambda s: int(s.split(":")[0].split()[1])):
        terminalreporter.write_line(line)
