import sys

import numpy as np
import pytest

import modelfuzz as mf


def pytest_terminal_summary(terminalreporter):
    """Repeat the release-gate verdict lines where capture can't hide them."""
    gate = sys.modules.get("test_acceptance")
    lines = getattr(gate, "VERDICT_LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def seed_repo():
    return mf.build_seed_repository()


@pytest.fixture(scope="session")
def scenarios():
    return mf.load_scenarios()


@pytest.fixture
def rng():
    return np.random.default_rng(42)
