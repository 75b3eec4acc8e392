from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from sgrg import cli


def run(args, out):
    return cli.main(list(args) + ["--out", str(out)])


class TestParsing:
    def test_missing_command(self, capsys):
        assert cli.main([]) == cli.EXIT_USAGE

    @pytest.mark.parametrize("argv", [
        ["bogus"], ["decompose", "--nope", "1"], ["tune", "--beta", "lots"], ["decompose", "--L", "x"],
    ])
    def test_usage_errors(self, argv, capsys):
        assert cli.main(argv) == cli.EXIT_USAGE
        assert "usage error" in capsys.readouterr().err

    def test_help(self, capsys):
        assert cli.main(["--help"]) == cli.EXIT_OK

    def test_beta_spelling(self):
        ns = cli.parse(["tune", "--beta", "10pi"])
        assert ns.beta == pytest.approx(10 * math.pi)

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\nL = 32\nbeta = 10pi\neps0 = 0.05\n")
        ns = cli.parse(["delta-k", "--config", str(cfg), "--eps0", "0.1"])
        assert ns.L == 32 and ns.beta == pytest.approx(10 * math.pi) and ns.eps0 == 0.1

    def test_config_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("colour = blue\n")
        assert cli.main(["tune", "--config", str(cfg)]) == cli.EXIT_USAGE

    def test_config_malformed(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("just words\n")
        with pytest.raises(cli.UsageError):
            cli.read_config(cfg)

    def test_digest_ignores_output_dir(self):
        a = cli.config_of(cli.parse(["tune", "--out", "x"]))
        b = cli.config_of(cli.parse(["tune", "--out", "y"]))
        assert cli.digest(a) == cli.digest(b)
        assert cli.digest(a) != cli.digest(cli.config_of(cli.parse(["tune", "--seed", "1"])))


class TestCommands:
    def test_decompose(self, tmp_path, capsys):
        assert run(["decompose", "--L", "8"], tmp_path) == cli.EXIT_OK
        text = (tmp_path / "cov_L8.csv").read_text()
        assert text.startswith("# sgrg command=decompose digest=")
        assert "PASS" in capsys.readouterr().out
        doc = json.loads((tmp_path / "decompose.json").read_text())
        assert doc["passed"] and doc["criterion"] == "covariance"

    def test_numeric_failure_exit(self, tmp_path, capsys):
        # no delta^j-decaying orbit for L = 8, beta = 10 pi
        assert run(["rg-flow", "--L", "8", "--beta", "10pi"], tmp_path) == cli.EXIT_NUMERIC
        assert "DivergenceError" in capsys.readouterr().err

    def test_polymer_enum_limits(self, tmp_path, capsys):
        assert run(["polymer-enum", "--max-size", "9"], tmp_path) == cli.EXIT_USAGE

    def test_explicit_sigma0_escapes(self, tmp_path):
        assert run(["rg-flow", "--sigma0", "0"], tmp_path) == cli.EXIT_ACCEPTANCE

    def test_tune_report(self, tmp_path, capsys):
        assert run(["tune"], tmp_path) == cli.EXIT_OK
        doc = json.loads((tmp_path / "tune_report.json").read_text())
        assert all(doc["escapes"].values())
        assert doc["sigma0"] == pytest.approx(doc["stable_orbit_sigma0"], abs=1e-15)
        assert doc["run"]["digest"] == json.loads((tmp_path / "tune.json").read_text())["digest"]

    def test_every_artifact_has_header(self, tmp_path, capsys):
        for args in (["decompose", "--L", "4"], ["delta-k"], ["polymer-enum", "--max-size", "3"],
                     ["gff-sample", "--grid", "16", "--side", "4", "--n-scales", "1"]):
            run(args, tmp_path)
        for p in tmp_path.iterdir():
            if p.suffix in (".csv", ".jsonl", ".gp"):
                assert p.read_text().startswith("# sgrg ")
            elif p.suffix == ".bin":
                assert b'"digest"' in p.read_bytes().split(b"\n", 1)[0]
            elif p.suffix == ".json":
                assert "digest" in json.loads(p.read_text())


class TestReport:
    def test_missing_dir(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path / "none")]) == cli.EXIT_USAGE

    def test_empty_dir(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_pass_and_fail(self, tmp_path, capsys):
        run(["delta-k"], tmp_path)
        assert cli.main(["report", "--out", str(tmp_path)]) == cli.EXIT_OK
        run(["rg-flow", "--sigma0", "0"], tmp_path)
        assert cli.main(["report", "--out", str(tmp_path)]) == cli.EXIT_ACCEPTANCE
        out = capsys.readouterr().out
        assert "PASS  delta-k" in out and "FAIL  rg-flow" in out

    def test_compare_detects_difference(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["delta-k", "--seed", "1"], a)
        run(["delta-k", "--seed", "2"], b)
        assert cli.main(["report", "--out", str(a), "--compare", str(b)]) == cli.EXIT_ACCEPTANCE

    def test_schema_shipped(self):
        schema = json.loads(Path(cli.SCHEMA).read_text())
        assert schema
