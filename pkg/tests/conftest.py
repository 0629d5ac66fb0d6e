"""Shared pytest fixtures for workbench tests."""

import numpy as np
import pytest

from src.bcs import BcsParams, mean_field_angles, solve_gap
from src.circuit import CouplingMap
from src.models import BcsConfig, NecConfig, NoiseConfig, RcConfig, RecConfig, RunConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo or fitting studies")


@pytest.fixture
def chain_params():
    """Three levels at -1, 0, 1 with g=0.5 and Δt=0.2 over 15 steps."""
    return BcsParams(levels=(-1.0, 0.0, 1.0), g=0.5, dt=0.2, n_steps=15)


@pytest.fixture
def mean_field(chain_params):
    return mean_field_angles(chain_params, solve_gap(chain_params))


@pytest.fixture
def linear_map():
    return CouplingMap.linear(3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """Two-step run small enough for unit tests."""
    return RunConfig(
        bcs=BcsConfig(total_time=0.4),
        noise=NoiseConfig(preset="crosstalk-rc", readout_flip=0.02),
        rc=RcConfig(mode="crosstalk", count=4),
        nec=NecConfig(enabled=True, count=3),
        rec=RecConfig(mode="full", calibration_shots=2000),
        shots=500,
        seed=7,
    )


@pytest.fixture
def temp_config_file(tmp_path):
    """Create a temporary config file path."""
    return tmp_path / "config.json"
