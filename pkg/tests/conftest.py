import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hiergame.game import make_benchmark

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def duopoly():
    return make_benchmark("quad-duopoly")


@pytest.fixture(scope="session")
def line():
    return make_benchmark("nonunique-line")


@pytest.fixture(scope="session")
def chain():
    return make_benchmark("hier-chain")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion with its measured values."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], outcome.upper(), props.get("measured", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, outcome, measured in sorted(lines):
            terminalreporter.write_line(f"criterion {num:>2}: {outcome:<6} {measured}")
