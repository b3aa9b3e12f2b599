import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures"

_acceptance = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _acceptance.append((report.nodeid.split("::", 1)[1], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _acceptance:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{tag}  {name}  {detail}")
