import hashlib
import json
import os
import time
from typing import Dict, List, Optional

import yaml

from refcal import __version__
from refcal.module_utils.errors import ConfigInvalid, InputError, UsageError
from refcal.module_utils.models import MetricConfig, RunManifest, TrainConfig
from refcal.module_utils.types import TJsonObject

SEED_ENVIRONMENT_VARIABLE = "REFCAL_SEED"
DEFAULT_SEED = 1234
FINGERPRINT_LENGTH = 16


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    from_environment = os.environ.get(SEED_ENVIRONMENT_VARIABLE)
    if from_environment is None:
        return DEFAULT_SEED
    try:
        return int(from_environment)
    except ValueError:
        raise UsageError(
            "{0} must be an integer, got '{1}'.".format(SEED_ENVIRONMENT_VARIABLE, from_environment),
        )


def fingerprint(train_config: Optional[TrainConfig], metric_config: MetricConfig) -> str:
    canonical = json.dumps(
        {"train": None if train_config is None else train_config.to_json(), "metrics": metric_config.to_json()},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:FINGERPRINT_LENGTH]


def validate_input_file(path: str) -> None:
    if not os.path.isfile(path):
        raise InputError("Input file '{0}' doesn't exist - check the path and try again please.".format(path))


def validate_positive(name: str, value: float) -> None:
    if not value > 0:
        raise UsageError("--{0} must be positive, got {1}.".format(name, value))


def validate_at_least(name: str, value: int, minimum: int) -> None:
    if value < minimum:
        raise UsageError("--{0} must be >= {1}, got {2}.".format(name, minimum, value))


def load_config_file(path: str) -> TJsonObject:
    """A flat mapping of configuration keys; JSON files parse as YAML."""
    validate_input_file(path)
    with open(path, "r", encoding="utf-8") as stream:
        try:
            document = yaml.safe_load(stream)
        except yaml.YAMLError as e:
            raise ConfigInvalid("Could not parse configuration '{0}': {1}.".format(path, e))
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigInvalid("Configuration '{0}' must be a mapping of keys to values.".format(path))
    return document


def build_train_config(file_values: TJsonObject, overrides: Dict[str, object]) -> TrainConfig:
    """File values first, then every flag that was actually given."""
    values: TJsonObject = dict(file_values)
    values.update({key: value for key, value in overrides.items() if value is not None})  # type: ignore[misc]
    return TrainConfig.from_json(values)


def parse_group_map(text: str) -> Dict[int, int]:
    """Parse '0:0,1:0,2:1,3:1' into a class-to-group mapping."""
    mapping: Dict[int, int] = {}
    for item in text.split(","):
        try:
            source, target = item.split(":")
            mapping[int(source)] = int(target)
        except ValueError:
            raise UsageError("Malformed group map entry '{0}', expected <class>:<group>.".format(item))
    return mapping


def parse_int_list(name: str, text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise UsageError("--{0} expects a comma separated list of integers, got '{1}'.".format(name, text))


def format_percent(value: Optional[float]) -> str:
    return "n/a" if value is None else "{0:.2f}%".format(100.0 * value)


def build_manifest(
    command: str,
    config_path: Optional[str],
    inputs: List[str],
    outputs: List[str],
    seed: Optional[int],
    started: float,
) -> RunManifest:
    """started is a time.perf_counter() reading taken when the command began."""
    return RunManifest(
        command=command,
        config_path=config_path,
        inputs=inputs,
        outputs=outputs,
        seed=seed,
        version=__version__,
        duration_seconds=round(time.perf_counter() - started, 3),
    )
