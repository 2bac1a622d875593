"""Collects the acceptance suite's per-criterion verdicts and prints them
after the run, so they appear even when output capture is on."""

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
