import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mdnpath.types import ModelConfig, NormStats

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def tiny_cfg():
    return ModelConfig(M=2, h=3, p=4, lstm_width=8, lstm_layers=2)


@pytest.fixture
def unit_stats():
    return NormStats.identity()


def circle_obs(n, radius=10.0, speed=5.0, dt=0.08, phase=0.0):
    """Observations on a counter-clockwise circle centred at the origin."""
    w = speed / radius
    t = np.arange(n) * dt
    a = phase + w * t
    x, y = radius * np.cos(a), radius * np.sin(a)
    th = np.array([math.atan2(math.cos(v), -math.sin(v)) for v in a])
    return np.column_stack([x, y, np.full(n, speed), th])


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
