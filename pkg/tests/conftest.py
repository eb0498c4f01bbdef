from __future__ import annotations

import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def configs_dir():
    return os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs")


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(k, passed, detail)."""

    def record(k, passed, detail=""):
        line = f"CRITERION {k}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _CRITERIA[k] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
            terminalreporter.write_line(_CRITERIA[k])
