import pytest

from refcal.module_utils.datagen import generate_blobs
from refcal.module_utils.models import TrainConfig

FAST_CONFIG = {
    "stage1_epochs": 3,
    "stage1_batch_size": 24,
    "stage1_lr": 0.05,
    "tau": 0.5,
    "stage2_epochs": 3,
    "stage2_batch_size": 16,
    "stage2_lr": 0.1,
    "hidden_dims": [8],
    "representation_dim": 6,
    "projection_dim": 4,
    "seed": 0,
}


@pytest.fixture
def blobs():
    return generate_blobs(3, 40, 4, imbalance_factor=0.5, seed=0)


@pytest.fixture
def fast_values():
    return dict(FAST_CONFIG)


@pytest.fixture
def fast_config():
    return TrainConfig.from_json(FAST_CONFIG)
