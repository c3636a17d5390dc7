import sys
from pathlib import Path

import pytest

# make oracles.py importable regardless of the invocation directory
sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose each phase's report to fixtures so the acceptance module
    # can print one verdict line per criterion after the test ran
    outcome = yield
    report = outcome.get_result()
    setattr(item, "rep_" + report.when, report)
