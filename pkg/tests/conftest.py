import os
import time
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []
_SESSION_BUDGET_S = 600.0


def pytest_sessionstart(session):
    session.config._atekit_t0 = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - getattr(config, "_atekit_t0", time.perf_counter())
    if not ACCEPTANCE_LINES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        tr.write_line(line)
    verdict = "PASS" if elapsed < _SESSION_BUDGET_S else "FAIL"
    tr.write_line(f"{verdict} C9-runtime  whole session {elapsed:.1f}s (budget {_SESSION_BUDGET_S:.0f}s)")
