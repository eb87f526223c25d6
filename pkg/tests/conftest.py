import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gridfrag.population import FailureRecord
from gridfrag.stress import StressDistribution, StressSeries, synthesize_stress

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_series(values, features=("wind_speed",), start=0):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return StressSeries(np.arange(start, start + values.shape[0]), tuple(features), values)


def make_record(counts, start=0):
    counts = np.asarray(counts)
    return FailureRecord(np.arange(start, start + counts.size), counts)


@pytest.fixture(scope="session")
def wind_year():
    """One year of hourly wind at 0.1 m/s resolution."""
    return synthesize_stress(StressDistribution("wind_speed", 2.0, 0.4), 8760, 11, resolution=0.1)
