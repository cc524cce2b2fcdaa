import sys
from pathlib import Path

import pytest

from localnews.fixtures import load_demo_world

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture(scope="session")
def world():
    return load_demo_world()


@pytest.fixture
def miami(world):
    return world.profiles["miami-herald"]


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
