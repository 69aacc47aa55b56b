"""
Pytest configuration and fixtures for the test suite
"""

import logging
import os
import sys

import numpy as np
import pytest

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

# Set test environment variables before any imports
os.environ["BERKSON_MD_ENVIRONMENT"] = "development"
os.environ["BERKSON_MD_WORKERS"] = "1"
os.environ["BERKSON_MD_LOG_FORMAT"] = "text"
os.environ["BERKSON_MD_LOG_LEVEL"] = "DEBUG"

from berkson_md.schemas.model import NoiseSpec  # noqa: E402
from berkson_md.schemas.simulation import DGPSpec  # noqa: E402
from berkson_md.schemas.smoothing import Dataset, PlanConfig  # noqa: E402
from berkson_md.services.families import get_family  # noqa: E402
from berkson_md.services.simulation import sample  # noqa: E402

SEED = 20240101


@pytest.fixture
def linear_model():
    return get_family("linear-1d")


@pytest.fixture
def case2_model():
    return get_family("case2-2d")


@pytest.fixture
def noise1():
    return NoiseSpec(variances=(0.01,))


@pytest.fixture
def noise2():
    return NoiseSpec(variances=(0.01, 0.01))


@pytest.fixture
def case1_data():
    """Case-1 null data, n = 200"""
    return sample(DGPSpec(case=1, model_id="0", n=200, seed=SEED))


@pytest.fixture
def case1_plan():
    return PlanConfig(bandwidth_rule="case1", a=0.5, b=0.5).build(n=200, d=1)


@pytest.fixture
def case2_data():
    """Case-2 null data, n = 150"""
    return sample(DGPSpec(case=2, model_id="0", n=150, seed=SEED))


@pytest.fixture
def case2_plan():
    return PlanConfig(bandwidth_rule="case2", grid_nodes=(41, 41)).build(n=150, d=2)


@pytest.fixture
def noiseless_linear():
    """Y = 2 Z exactly"""
    z = np.linspace(-0.95, 0.95, 60)
    return Dataset(z=z, y=2.0 * z)


@pytest.fixture
def write_csv(tmp_path):
    """Write rows (header first) to a CSV file under tmp_path and return its path"""

    def _write(rows, name="data.csv"):
        path = tmp_path / name
        path.write_text("\n".join(",".join(str(v) for v in row) for row in rows) + "\n")
        return path

    return _write


@pytest.fixture
def events(caplog):
    """Return structured log records with a given event_type"""
    caplog.set_level(logging.DEBUG)

    def _events(event_type):
        return [r for r in caplog.records if getattr(r, "event_type", None) == event_type]

    return _events
