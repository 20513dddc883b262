import datetime as dt

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roadsafety.data_model import AlarmType, AlertEvent, WeatherRecord

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

UTC = dt.timezone.utc

WEATHER = WeatherRecord(
    tempC=27.0,
    humidity=60.0,
    precipMM=0.0,
    visibility=10.0,
    windspeedKmph=12.0,
    pressure=1010.0,
    cloudcover=40.0,
    DewPointC=18.0,
    sunHour=9.0,
    uvIndex=6.0,
    winddirDegree=180.0,
)


def make_event(
    device="bus1",
    alarm="HMW",
    when="2019-03-02T14:05:00",
    lat=12.9716,
    lon=77.5946,
    speed=40.0,
    road="NH44",
    altitude=900.0,
    weather=WEATHER,
    line=0,
):
    ts = dt.datetime.fromisoformat(when).replace(tzinfo=UTC)
    return AlertEvent(device, AlarmType(alarm), ts, lat, lon, speed, altitude, road, weather, line=line)


@pytest.fixture
def event_factory():
    return make_event


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
