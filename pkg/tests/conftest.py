import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from graphene_mep.closure import PhysicalScales

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def scales():
    """Reduced units c = kT = hbar = 1."""
    return PhysicalScales.reduced()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)



ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)``; the lines are printed after the run."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
