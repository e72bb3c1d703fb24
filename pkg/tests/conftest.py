import os

import pytest
from hypothesis import HealthCheck, settings

from duplex_asr import channel
from duplex_asr.model import SystemParams

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def energy(dbm):
    return 10 ** (dbm / 10) * 1e-3


@pytest.fixture
def params20():
    return SystemParams.from_table(energy(20.0))


@pytest.fixture
def flat20(params20):
    return channel.flat_channel(params20, -60.0)


# acceptance summary: one line per criterion, printed at the end of the run
_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
