import sys


def pytest_terminal_summary(terminalreporter):
    """Replay the acceptance verdict lines after the test table."""
    for name, mod in sys.modules.items():
        if name.endswith("test_acceptance") and getattr(mod, "VERDICTS", None):
            terminalreporter.write_sep("-", "acceptance criteria")
            for line in mod.VERDICTS:
                terminalreporter.write_line(line)
