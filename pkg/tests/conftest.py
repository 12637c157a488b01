import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per criterion and fail the test on FAIL."""

    def _report(number: int, name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
