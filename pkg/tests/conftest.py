import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlpn_apsk import ChannelParams, HarmonicsBank

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ch7000():
    return ChannelParams(7000)


@pytest.fixture(scope="session")
def ch5500():
    return ChannelParams(5500)


@pytest.fixture(scope="session")
def bank7000(ch7000):
    return HarmonicsBank(ch7000)


@pytest.fixture(scope="session")
def bank5500(ch5500):
    return HarmonicsBank(ch5500)


@pytest.fixture(scope="session")
def linear_channel():
    """Kerr-free link with the noise of 7000 km."""
    return ChannelParams(7000, gamma=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k[1]), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
