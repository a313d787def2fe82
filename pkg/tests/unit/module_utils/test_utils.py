import time

import pytest

from refcal import __version__
from refcal.module_utils.errors import ConfigInvalid, InputError, UsageError
from refcal.module_utils.models import MetricConfig, TrainConfig
from refcal.module_utils.utils import (
    DEFAULT_SEED,
    build_manifest,
    build_train_config,
    fingerprint,
    format_percent,
    load_config_file,
    parse_group_map,
    parse_int_list,
    resolve_seed,
    validate_at_least,
    validate_input_file,
    validate_positive,
)


class TestResolveSeed:
    def test_explicit(self, monkeypatch):
        monkeypatch.setenv("REFCAL_SEED", "7")

        assert 5 == resolve_seed(5)

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("REFCAL_SEED", "7")

        assert 7 == resolve_seed(None)

    def test_default(self, monkeypatch):
        monkeypatch.delenv("REFCAL_SEED", raising=False)

        assert DEFAULT_SEED == resolve_seed(None)
        assert 1234 == DEFAULT_SEED

    def test_malformed_environment(self, monkeypatch):
        monkeypatch.setenv("REFCAL_SEED", "seven")

        with pytest.raises(UsageError):
            resolve_seed(None)


class TestFingerprint:
    def test_stable(self):
        first = fingerprint(TrainConfig(), MetricConfig())

        assert 16 == len(first)
        assert first == fingerprint(TrainConfig.from_json({}), MetricConfig())
        int(first, 16)

    def test_sensitive(self):
        baseline = fingerprint(TrainConfig(), MetricConfig())

        assert baseline != fingerprint(TrainConfig(), MetricConfig(bins=10))
        assert baseline != fingerprint(TrainConfig.from_json({"seed": 1}), MetricConfig())
        assert baseline != fingerprint(None, MetricConfig())


class TestValidation:
    def test_missing_input(self, tmp_path):
        with pytest.raises(InputError) as e:
            validate_input_file(str(tmp_path / "absent.txt"))

        assert 3 == e.value.exit_code

    @pytest.mark.parametrize("value", [0, -1.5])
    def test_positive(self, value):
        with pytest.raises(UsageError):
            validate_positive("bandwidth", value)

    def test_at_least(self):
        validate_at_least("bins", 1, 1)
        with pytest.raises(UsageError) as e:
            validate_at_least("bins", 0, 1)

        assert "--bins" in e.value.message


class TestLoadConfigFile:
    def test_yaml(self, tmp_path):
        path = tmp_path / "config.yml"
        path.write_text("tau: 0.2\nhidden_dims: [16, 8]\n", encoding="utf-8")

        assert {"tau": 0.2, "hidden_dims": [16, 8]} == load_config_file(str(path))

    def test_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"loss": "focal", "gamma": 1.0}', encoding="utf-8")

        assert {"loss": "focal", "gamma": 1.0} == load_config_file(str(path))

    def test_empty(self, tmp_path):
        path = tmp_path / "config.yml"
        path.write_text("", encoding="utf-8")

        assert {} == load_config_file(str(path))

    @pytest.mark.parametrize("content", ["- 1\n- 2\n", "tau: [0.1\n"])
    def test_invalid(self, tmp_path, content):
        path = tmp_path / "config.yml"
        path.write_text(content, encoding="utf-8")

        with pytest.raises(ConfigInvalid) as e:
            load_config_file(str(path))

        assert 2 == e.value.exit_code

    def test_missing(self, tmp_path):
        with pytest.raises(InputError):
            load_config_file(str(tmp_path / "absent.yml"))


class TestBuildTrainConfig:
    def test_flags_override_file(self):
        config = build_train_config({"tau": 0.2, "seed": 3}, {"seed": 5, "tau": None, "loss": "ls"})

        assert 0.2 == config.stage1.tau
        assert 5 == config.seed
        assert "label_smoothing" == config.stage2.loss.kind


class TestParsers:
    def test_group_map(self):
        assert {0: 0, 1: 0, 2: 1, 3: 1} == parse_group_map("0:0,1:0,2:1,3:1")

    @pytest.mark.parametrize("text", ["0-0,1:1", "0:a", "0:0:1"])
    def test_malformed_group_map(self, text):
        with pytest.raises(UsageError):
            parse_group_map(text)

    def test_int_list(self):
        assert [1, 3, 5] == parse_int_list("severities", "1, 3,5,")

    def test_malformed_int_list(self):
        with pytest.raises(UsageError) as e:
            parse_int_list("severities", "1,x")

        assert "--severities" in e.value.message

    @pytest.mark.parametrize("value,expected", [(None, "n/a"), (0.5, "50.00%"), (1.0, "100.00%"), (0.0, "0.00%")])
    def test_format_percent(self, value, expected):
        assert expected == format_percent(value)


class TestBuildManifest:
    def test_fields(self):
        manifest = build_manifest("generate", None, [], ["d.txt"], 1234, time.perf_counter())

        assert "generate" == manifest.command
        assert ["d.txt"] == manifest.to_json()["outputs"]
        assert __version__ == manifest.version
        assert manifest.duration_seconds >= 0.0

    def test_duration(self, mocker):
        mocker.patch("refcal.module_utils.utils.time.perf_counter", return_value=12.5)

        assert 2.5 == build_manifest("train", "c.yml", ["d.txt"], [], None, 10.0).duration_seconds
