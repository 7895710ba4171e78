import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).resolve().parent))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def families():
    """Lazily built library-level pipeline state for each bundled fixture."""
    from helpers import FixtureFamily

    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = FixtureFamily(name)
        return cache[name]

    return get


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, line in sorted(ACCEPTANCE.items()):
        terminalreporter.write_line(line)
