import pytest

CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""

    def report(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        CRITERIA_LINES.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
