import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# one verdict line per published-value check, filled by test_acceptance.py
acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.write_sep("-", "published-value checks")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
