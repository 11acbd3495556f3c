import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines after the run.

    The acceptance tests record one line per criterion; stdout capture would
    otherwise hide them on success, and they are the quickest way to see
    which guarantee broke.
    """
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
