import pytest

_REPORT: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Collects one ``PASS``/``FAIL`` line per acceptance criterion."""

    def add(criterion: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion:>2}: {detail}"
        _REPORT.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
