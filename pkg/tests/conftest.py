"""Pytest configuration file."""

import sys
from pathlib import Path

import pytest

# Add the project root to the Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from vertinav.config import config_from_mapping  # noqa: E402
from vertinav.geodesy import LocalFrame  # noqa: E402
from vertinav.models import RiskParams, VertiportGeometry  # noqa: E402

CONFIGS_DIR = project_root / "configs"

ZERO_NOISE = {
    "accel_noise_density": 0.0,
    "gyro_noise_density": 0.0,
    "accel_bias": [0.0, 0.0, 0.0],
    "gyro_bias": [0.0, 0.0, 0.0],
    "pr_white_sigma": 0.0,
    "multipath_sigma": 0.0,
    "carrier_sigma": 0.0,
    "reference_pr_sigma": 0.0,
    "common_error_sigma": 0.0,
    "baro_sigma_pa": 0.0,
    "ground_pressure_resolution": 0.0,
    "pixel_sigma": 0.0,
}


@pytest.fixture
def reference_geometry():
    """Vertiport sized for a 15.24 m D-value vehicle."""
    return VertiportGeometry(d_max=15.24)


@pytest.fixture
def reference_risk():
    """SAIL V approach risk parameters."""
    return RiskParams(p_out=1e-6, integrity_risk=1e-7, sigma_fte=0.25, k95=2.0)


@pytest.fixture
def frame():
    """Local ENU frame at the default reference point."""
    return LocalFrame(51.855, 11.418, 190.0)


def scenario_document(**scenario):
    """Configuration document for a short 60 m flight with scenario overrides."""
    base = {"vertiport_b": [60.0, 0.0, 0.0]}
    base.update(scenario)
    return {"requirements": {"geometry": {"d_max": 15.24}}, "scenario": base}


@pytest.fixture
def short_config():
    """Validated configuration of a short nominal flight."""
    return config_from_mapping(scenario_document(seed=11))


@pytest.fixture
def zero_noise_config():
    """Short flight with every sensor error switched off."""
    return config_from_mapping(scenario_document(seed=3, noise=ZERO_NOISE))
