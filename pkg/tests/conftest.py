import pytest


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records and prints one PASS/FAIL line."""

    def report(k, ok, detail):
        line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[k] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
