import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(number, name, passed, detail=""):
    ACCEPTANCE[number] = (name, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number:2d}: {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(20240611)
