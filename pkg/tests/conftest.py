"""
Shared fixtures: the bundled scenario, a short variant of it and a clean telemetry counter
"""
import pytest

from src.models.microgrid import reference_testbed
from src.models.scenario import default_scenario
from src.services.telemetry import telemetry


@pytest.fixture(autouse=True)
def clean_telemetry():
    telemetry.reset()
    yield
    telemetry.reset()


@pytest.fixture(scope='session')
def bundled():
    return default_scenario()


@pytest.fixture
def spec():
    return reference_testbed()


@pytest.fixture
def scenario(bundled):
    return bundled


@pytest.fixture
def short_scenario(bundled):
    """Quarter of an hour starting at midnight, traced every minute"""
    return bundled.with_overrides(duration_hours=0.25, trace_period=60.0)
