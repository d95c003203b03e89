"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

import pytest

VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, name, passed, detail=""):
        VERDICTS[number] = (name, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        name, passed, detail = VERDICTS[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}: {detail}")
