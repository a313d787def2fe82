import pytest
import yaml

from refcal.module_utils.pipeline import train_refcal
from refcal.module_utils.serialization import write_checkpoint, write_dataset


@pytest.fixture
def dataset_file(tmp_path, blobs):
    path = str(tmp_path / "blobs.txt")
    write_dataset(path, blobs)
    return path


@pytest.fixture
def config_file(tmp_path, fast_values):
    path = tmp_path / "config.yml"
    path.write_text(yaml.safe_dump(fast_values), encoding="utf-8")
    return str(path)


@pytest.fixture
def checkpoint_file(tmp_path, blobs, fast_config):
    params, _ = train_refcal(blobs, fast_config)
    path = str(tmp_path / "checkpoint.bin")
    write_checkpoint(path, params)
    return path
