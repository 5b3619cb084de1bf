import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tmpp.log_model import Log  # noqa: E402


def random_log(rng, n, n_users=6, n_brands=5, day_lo=0, day_hi=95, buy_p=0.15):
    action = rng.choice(4, size=n, p=[0.75 - buy_p, buy_p, 0.15, 0.10])
    return Log.from_arrays(
        rng.integers(1, n_users + 1, n),
        rng.integers(1, n_brands + 1, n) * 10,
        action,
        rng.integers(day_lo, day_hi, n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20140415)


# criterion number -> (title, passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
