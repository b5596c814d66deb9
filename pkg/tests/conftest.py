import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import _support  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    rows = _support.ACCEPTANCE
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        ok, detail = rows[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
