"""Shared fixtures and the acceptance-criteria terminal reporter."""
import pytest

_CRITERION_LINES: list = []


@pytest.fixture(scope="session")
def criterion_report():
    """Record one pass/fail line per acceptance criterion.

    The lines are printed immediately (visible with -s and in failure
    output) and echoed again in the terminal summary so a plain pytest run
    always shows them.
    """

    def _record(number: int, name: str, passed: bool, detail: str) -> None:
        tag = "PASS" if passed else "FAIL"
        line = f"[{tag}] criterion {number}: {name} - {detail}"
        _CRITERION_LINES.append((number, line))
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)
