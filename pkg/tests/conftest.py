import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from minilake import runner  # noqa: E402

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def ws(tmp_path, monkeypatch):
    monkeypatch.delenv("BPLN_BUDGET_BYTES", raising=False)
    return runner.Workspace(tmp_path / "ws")


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str = ""):
        ACCEPTANCE[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}".rstrip())
