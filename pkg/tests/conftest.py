import sys
import numpy as np
import pytest

from mwm.machine import MachineConfig, enumerate_combinations


@pytest.fixture
def h4():
    config = MachineConfig(4, max_shut=2, f=0.6)
    return config, enumerate_combinations(config)


def random_cov(rng, K, rank=None):
    A = rng.normal(size=(K, rank or K))
    S = A @ A.T
    if rank is None:
        S += 0.1 * np.eye(K)
    return S


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n][1])
