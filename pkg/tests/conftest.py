import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines after the test summary, where
    pytest's output capture cannot swallow them."""
    mod = (sys.modules.get("tests.test_acceptance")
           or sys.modules.get("test_acceptance"))
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance summary")
        for line in verdicts:
            terminalreporter.write_line(line)
