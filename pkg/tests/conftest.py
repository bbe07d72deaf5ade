import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stepemu.link import UI, link_step
from stepemu.step import StepResponse, synth_channel_step

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def monotone_step(dt=UI / 64, t_end=6e-9, tau=0.3e-9, delay=0.2e-9):
    t = dt * np.arange(int(round(t_end / dt)) + 1)
    return StepResponse(dt, np.where(t >= delay, 1 - np.exp(-(t - delay) / tau), 0.0), label="mono")


def overshoot_step(dt=UI / 64, t_end=8e-9, zeta=0.5, wn=2 * math.pi * 1.5e9):
    t = dt * np.arange(int(round(t_end / dt)) + 1)
    wd = wn * math.sqrt(1 - zeta**2)
    y = 1 - np.exp(-zeta * wn * t) * (np.cos(wd * t) + zeta / math.sqrt(1 - zeta**2) * np.sin(wd * t))
    return StepResponse(dt, y, label="overshoot")


def ringing_step(dt=UI / 64, t_end=12e-9, zeta=0.08, wn=2 * math.pi * 2e9):
    return overshoot_step(dt, t_end, zeta, wn)


@pytest.fixture(scope="session")
def channel():
    return synth_channel_step()


@pytest.fixture(scope="session")
def link_F():
    return link_step(8)


@pytest.fixture(scope="session")
def mono():
    return monotone_step()


@pytest.fixture(scope="session")
def ringing():
    return ringing_step()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
