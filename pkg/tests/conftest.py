import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

acceptance_lines: list[str] = []


def record_criterion(line: str) -> None:
    """Collect an acceptance pass/fail line for the end-of-run summary."""
    acceptance_lines.append(line)
    print(line)  # also visible live under pytest -s


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
