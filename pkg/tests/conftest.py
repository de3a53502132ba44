import os
from pathlib import Path

import pytest

from ldpquantile.inference import PivotTable

CACHE = Path(os.environ.get("LDPQUANTILE_TEST_PIVOTS", Path(__file__).parent / ".pivot_cache"))


@pytest.fixture(scope="session")
def pivot_table():
    """Pivot table persisted between test sessions (pivots are expensive to simulate)."""
    return PivotTable.open(CACHE / "pivots.json")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report_criterion():
    """Record and print one pass/fail line; returns ``ok`` for the caller to assert on."""

    def report(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
