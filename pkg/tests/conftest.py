import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    """Append ``(label, passed, detail)`` (``passed=None`` marks a skip); lines are echoed in the terminal summary."""

    def record(label, passed, detail=""):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"[{status}] criterion {label}: {detail}"
        _LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
