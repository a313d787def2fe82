import pytest

from refcal.module_utils.datagen import generate_blobs
from refcal.module_utils.models import TrainConfig
from refcal.module_utils.pipeline import train_baseline, train_refcal

DEFAULT_SEED = 1234
DEFAULT_N_MAX = 2000


@pytest.fixture(scope="session")
def default_scenario():
    return generate_blobs(4, DEFAULT_N_MAX, 8, imbalance_factor=0.1, seed=DEFAULT_SEED)


@pytest.fixture(scope="session")
def default_config():
    return TrainConfig.from_json({"seed": DEFAULT_SEED})


@pytest.fixture(scope="session")
def refcal_run(default_scenario, default_config):
    return train_refcal(default_scenario, default_config)


@pytest.fixture(scope="session")
def baseline_run(default_scenario, default_config):
    return train_baseline(default_scenario, default_config)
