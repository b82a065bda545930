import pytest

_REPORT = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(label, ok, detail=""):
        _REPORT.append(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        print(_REPORT[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
