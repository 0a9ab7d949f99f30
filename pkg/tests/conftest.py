import pytest

_LINES = []


class AcceptanceReport:
    def __call__(self, cid: str, passed: bool, detail: str):
        _LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {detail}")
        return passed


@pytest.fixture(scope="session")
def report():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
