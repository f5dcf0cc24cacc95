from __future__ import annotations

import pytest

CRITERIA: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one acceptance line; printed now and again in the summary."""

    def emit(number: int | str, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        CRITERIA.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
