import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_verdicts = {}


@pytest.fixture
def verdict():
    """Record one acceptance line and fail the test when the criterion is not met."""
    def record(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} [{detail}]"
        _verdicts[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_verdicts):
            terminalreporter.write_line(_verdicts[number])
