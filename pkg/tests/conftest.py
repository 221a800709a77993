import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one status line; all lines are repeated in the terminal summary."""
    def add(label: str, ok: bool | None, detail: str = "") -> None:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[ok]
        line = f"{status}  {label}" + (f": {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
