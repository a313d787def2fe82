import json
import os

import pytest

from refcal.commands.generate import main
from refcal.module_utils.serialization import read_dataset


class TestGenerate:
    def test_small_scenario(self, tmp_path, capsys):
        out = str(tmp_path / "d.txt")

        main(["--classes", "4", "--n-max", "500", "--imbalance", "0.1", "--dims", "2", "--seed", "1234", "--out", out])

        dataset = read_dataset(out)
        assert [500, 232, 108, 50] == dataset.class_counts().tolist()
        assert 2 == dataset.dim
        assert 1234 == dataset.meta.seed
        assert "Class counts: 500, 232, 108, 50" in capsys.readouterr().out
        with open(out + ".manifest.json", encoding="utf-8") as stream:
            manifest = json.load(stream)
        assert "generate" == manifest["command"]
        assert [out] == manifest["outputs"]
        assert 1234 == manifest["seed"]

    def test_defaults(self, tmp_path):
        out = str(tmp_path / "d.txt")

        main(["--seed", "1234", "--out", out])

        dataset = read_dataset(out)
        assert [2000, 928, 431, 200] == dataset.class_counts().tolist()
        assert 8 == dataset.dim

    def test_invalid_imbalance(self, tmp_path):
        out = str(tmp_path / "d.txt")

        with pytest.raises(SystemExit) as e:
            main(["--imbalance", "1.5", "--out", out])

        assert 2 == e.value.code
        assert not os.path.exists(out)

    def test_missing_out(self):
        with pytest.raises(SystemExit) as e:
            main(["--classes", "3"])

        assert 2 == e.value.code

    def test_group_map_and_severity(self, tmp_path):
        out = str(tmp_path / "binary.txt")

        main(["--classes", "4", "--n-max", "40", "--group-map", "0:0,1:0,2:1,3:1", "--severity", "3", "--out", out])

        dataset = read_dataset(out)
        assert 2 == dataset.meta.num_classes
        assert 3 == dataset.meta.corruption_severity

    def test_malformed_group_map(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            main(["--group-map", "0-0", "--out", str(tmp_path / "d.txt")])

        assert 2 == e.value.code

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        from_flag = tmp_path / "flag.txt"
        from_environment = tmp_path / "environment.txt"
        monkeypatch.setenv("REFCAL_SEED", "77")

        main(["--n-max", "60", "--seed", "77", "--out", str(from_flag)])
        main(["--n-max", "60", "--out", str(from_environment)])

        assert from_flag.read_text(encoding="utf-8") == from_environment.read_text(encoding="utf-8")
