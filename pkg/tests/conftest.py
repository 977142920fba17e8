import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tiedlab.tensor import Rng

ACCEPTANCE = []


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the terminal summary."""

    @contextmanager
    def record(number, title):
        info = {}
        try:
            yield info
        except BaseException:
            ACCEPTANCE.append((number, title, False, info.get("detail", "")))
            raise
        ACCEPTANCE.append((number, title, True, info.get("detail", "")))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
