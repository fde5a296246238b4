from __future__ import annotations

import pytest

_VERDICTS: list[tuple[int, bool, str]] = []


def _line(number: int, ok: bool, detail: str) -> str:
    return f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.fixture
def verdict():
    """Record ``(criterion, ok, detail)`` and print the pass/fail line."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _VERDICTS.append((number, ok, detail))
        print(_line(number, ok, detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(_line(*entry))
