import numpy as np
import pytest

from pdupower.fleet_sim import FleetConfig, LoadScenario, generate_fleet, simulate_telemetry


@pytest.fixture(scope="session")
def small_fleet():
    return generate_fleet(FleetConfig(n_clusters=2, pdus_per_cluster=2, machines_per_pdu=8, seed=3))


@pytest.fixture(scope="session")
def small_dataset(small_fleet):
    return simulate_telemetry(small_fleet, LoadScenario(), n_days=10, noise_sigma=0.02, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
