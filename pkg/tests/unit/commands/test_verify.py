import json

import pytest

from refcal.commands.verify import main


class TestVerify:
    def test_passes(self, capsys):
        main(["--batches", "3", "--seed", "0"])

        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "All 10 properties passed" in out

    def test_self_test_fails(self, tmp_path, capsys):
        out = str(tmp_path / "verify.json")

        with pytest.raises(SystemExit) as e:
            main(["--batches", "3", "--seed", "0", "--self-test", "--out", out])

        assert 1 == e.value.code
        assert "FAIL" in capsys.readouterr().out
        with open(out, encoding="utf-8") as stream:
            report = json.load(stream)
        assert not report["passed"]
        with open(out + ".manifest.json", encoding="utf-8") as stream:
            assert "verify" == json.load(stream)["command"]

    def test_no_output_without_out(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)

        main(["--batches", "2", "--seed", "1"])

        assert [] == list(tmp_path.iterdir())

    def test_batches_must_be_positive(self):
        with pytest.raises(SystemExit) as e:
            main(["--batches", "0"])

        assert 2 == e.value.code
