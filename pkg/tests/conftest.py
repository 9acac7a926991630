import pytest


@pytest.fixture
def criterion_log(request):
    """Append ``line`` to the acceptance summary printed after the run."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def log(line):
        print(line)
        lines.append(line)
    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
