import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from lsmtune.cost_model import SystemParams

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repo", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def sys_10gb():
    """10M entries of 1 KB, 4 KB pages, 10 GB of memory."""
    return SystemParams.from_json(CONFIGS / "system_10gb.json")


@pytest.fixture(scope="session")
def sys_desk():
    """Same data with 10 bits of memory per entry, so the tree has several levels."""
    return SystemParams.from_json(CONFIGS / "system_desk.json")


@pytest.fixture(scope="session")
def sys_sim():
    """10^5 entries at 10 bits of memory per entry, for the simulator."""
    return SystemParams.from_json(CONFIGS / "system_sim.json")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
