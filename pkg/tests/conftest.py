import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    def _record(criterion: str, ok: bool, details: list[str]):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}")
        ACCEPTANCE_LINES.extend(f"       {d}" for d in details)
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
