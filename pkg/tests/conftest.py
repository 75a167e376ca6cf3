import os
import time

import pytest

from mccfusion import ScenarioConfig, run_monte_carlo

# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def monte_carlo():
    """The default-config Monte Carlo of both scenarios, run once per session.

    Scenario 1 runs KF and MCC-KF (its wall time is the runtime budget);
    scenario 2 adds MCC-KF-2.
    """
    workers = os.cpu_count() or 1
    t0 = time.perf_counter()
    s1 = run_monte_carlo(ScenarioConfig(scenario=1), ("kf", "mcckf"), n_runs=20,
                         keep_logs=True, workers=workers)
    t1 = time.perf_counter()
    s2 = run_monte_carlo(ScenarioConfig(scenario=2), ("kf", "mcckf", "mcckf2"), n_runs=20,
                         keep_logs=True, workers=workers)
    return {"s1": s1, "s2": s2, "s1_seconds": t1 - t0, "workers": workers}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}")
