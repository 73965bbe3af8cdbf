import json

import numpy as np
import pytest

from proxyrecon import __version__
from proxyrecon.cli import main
from proxyrecon.data import write_matrix, write_series
from proxyrecon.pseudoproxy import (Ar1Params, TingleyConfig, gen_ar2_series,
                                    gen_noise_matrix, gen_tingley)
from proxyrecon.seeding import Seed


@pytest.fixture
def dataset(tmp_path):
    y = gen_ar2_series(120, seed=Seed(1), start_year=1880)
    X = gen_tingley(y, TingleyConfig(sigma_omega=0.3, n_series=5),
                    Seed(1).derive("X"))
    yp = tmp_path / "target.csv"
    xp = tmp_path / "proxies.csv"
    write_series(y, yp)
    write_matrix(X, xp)
    return str(xp), str(yp)


class TestTopLevel:
    def test_version_flag(self, capsys):
        assert main(["--version"]) == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["--definitely-not-a-flag"]) == 1

    def test_missing_subcommand_exits_one(self):
        assert main([]) == 1

    def test_unknown_recipe_is_usage_error(self):
        assert main(["experiment", "--recipe", "nope"]) == 1

    def test_fatal_error_exit_one(self, tmp_path):
        rc = main(["validate", "--proxies", str(tmp_path / "missing.csv"),
                   "--target", str(tmp_path / "missing2.csv")])
        assert rc == 1


class TestPcselect:
    def test_hand_example(self, capsys):
        assert main(["pcselect", "--eigenvalues", "4,3,2,1",
                     "--threshold", "0.8"]) == 0
        out = capsys.readouterr().out.splitlines()
        table = {tuple(r.split(",")[:2]): r.split(",")[2] for r in out[1:]}
        assert table[("variance_threshold", "0.8")] == "3"
        assert table[("variance_threshold_squared_BUG", "0.8")] == "2"

    def test_matrix_input(self, dataset, capsys):
        xp, _ = dataset
        assert main(["pcselect", "--matrix", xp]) == 0
        assert "variance_threshold" in capsys.readouterr().out

    def test_needs_some_input(self):
        assert main(["pcselect"]) == 1


class TestGenerate:
    def test_dimensions(self, capsys):
        assert main(["generate", "--kind", "brownian", "--years", "852",
                     "--series", "93", "--seed", "7"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 853  # header + one row per year
        assert len(lines[1].split(",")) == 94  # year + one cell per series

    def test_seed_reproducible(self, capsys):
        args = ["generate", "--kind", "ar1", "--phi", "0.3", "--years", "50",
                "--series", "3", "--seed", "9"]
        main(args)
        a = capsys.readouterr().out
        main(args)
        assert capsys.readouterr().out == a

    def test_output_file(self, tmp_path):
        p = tmp_path / "gen.csv"
        assert main(["generate", "--kind", "white", "--years", "30",
                     "--series", "2", "--output", str(p)]) == 0
        assert p.read_text().startswith("year,")


class TestValidateNulls:
    def test_validate_report(self, dataset, tmp_path, capsys):
        xp, yp = dataset
        out = tmp_path / "report.json"
        rc = main(["validate", "--proxies", xp, "--target", yp,
                   "--method", "lasso", "--lam", "tingley",
                   "--block-length", "40", "--output", str(out)])
        assert rc == 0
        rpt = json.loads(out.read_text())
        assert rpt["errors"] == []
        assert len(rpt["per_block"]) == 3
        assert rpt["aggregate"]["mean"] > 0

    def test_validate_stdout_default(self, dataset, capsys):
        xp, yp = dataset
        rc = main(["validate", "--proxies", xp, "--target", yp,
                   "--method", "ols", "--block-length", "40"])
        assert rc == 0
        json.loads(capsys.readouterr().out)  # parsable report on stdout

    def test_nulls_significance(self, dataset, tmp_path):
        xp, yp = dataset
        out = tmp_path / "nulls.json"
        rc = main(["nulls", "--proxies", xp, "--target", yp,
                   "--method", "ols", "--null-kind", "white",
                   "--replications", "10", "--block-length", "40",
                   "--seed", "3", "--output", str(out)])
        assert rc == 0
        rpt = json.loads(out.read_text())
        assert rpt["significance"]["aggregate"]["n_replications"] == 10
        assert 0 < rpt["significance"]["aggregate"]["exceedance"] <= 1


class TestDiagnose:
    def test_table_on_stdout(self, dataset, capsys):
        xp, _ = dataset
        assert main(["diagnose", "--proxies", xp,
                     "--stat", "lag1_autocorr"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "series,stat,value"
        assert len(lines) == 6  # five proxy series

    def test_bootstrap_quantiles(self, dataset, capsys):
        xp, _ = dataset
        assert main(["diagnose", "--proxies", xp, "--stat", "lag1_autocorr",
                     "--n-boot", "5", "--seed", "2"]) == 0
        out = capsys.readouterr().out
        assert "bootstrap_q0.5" in out


class TestExperiment:
    def test_bundle_written(self, tmp_path):
        rc = main(["experiment", "--recipe", "pc_criteria",
                   "--param", "eigenvalues=[4,3,2,1]",
                   "--seed", "42", "--output-dir", str(tmp_path / "b")])
        assert rc == 0
        manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert manifest["seed"] == [42, 0]

    def test_same_seed_identical_bytes(self, tmp_path):
        for sub in ("r1", "r2"):
            assert main(["experiment", "--recipe", "pc_criteria",
                         "--param", "eigenvalues=[9,4,1]", "--seed", "42",
                         "--output-dir", str(tmp_path / sub)]) == 0
        a = (tmp_path / "r1" / "manifest.json").read_bytes()
        b = (tmp_path / "r2" / "manifest.json").read_bytes()
        assert a == b

    def test_failed_stage_exit_two(self, tmp_path):
        rc = main(["experiment", "--recipe", "pc_criteria",
                   "--param", "eigenvalues=[1,2]",  # invalid: increasing
                   "--output-dir", str(tmp_path / "f")])
        assert rc == 2

    def test_env_var_default_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PROXYRECON_OUTPUT", str(tmp_path / "envout"))
        rc = main(["experiment", "--recipe", "pc_criteria",
                   "--param", "eigenvalues=[2,1]"])
        assert rc == 0
        assert (tmp_path / "envout" / "manifest.json").exists()


class TestConfigFile:
    def test_config_fills_defaults_flags_override(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[pcselect]\neigenvalues = 4,3,2,1\nthreshold = 0.8\n")
        assert main(["pcselect", "--config", str(cfg)]) == 0
        out1 = capsys.readouterr().out
        assert ",0.8," in out1
        assert main(["pcselect", "--config", str(cfg),
                     "--threshold", "0.9"]) == 0
        assert ",0.9," in capsys.readouterr().out

    def test_global_section(self, tmp_path):
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[global]\nseed = 5\noutput-dir = %s\n"
                       "[experiment]\nrecipe = pc_criteria\n"
                       % (tmp_path / "g"))
        assert main(["experiment", "--recipe", "pc_criteria",
                     "--param", "eigenvalues=[2,1]",
                     "--config", str(cfg)]) == 0
        manifest = json.loads((tmp_path / "g" / "manifest.json").read_text())
        assert manifest["seed"] == [5, 0]

    def test_unknown_key_fatal(self, tmp_path):
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[pcselect]\nbogus = 1\n")
        assert main(["pcselect", "--eigenvalues", "2,1",
                     "--config", str(cfg)]) == 1

    def test_missing_config_fatal(self, tmp_path):
        assert main(["pcselect", "--eigenvalues", "2,1",
                     "--config", str(tmp_path / "none.ini")]) == 1


class TestThreadInvariance:
    def test_experiment_threads_identical(self, tmp_path):
        for threads, sub in (("1", "t1"), ("4", "t4")):
            assert main(["experiment", "--recipe", "centering_bug",
                         "--param", "replicates=3", "--param", "n_series=3",
                         "--param", "sigma_omega=1.0",
                         "--threads", threads, "--seed", "8",
                         "--output-dir", str(tmp_path / sub)]) == 0
        a = (tmp_path / "t1" / "tables" / "centering_bug.csv").read_bytes()
        b = (tmp_path / "t4" / "tables" / "centering_bug.csv").read_bytes()
        assert a == b
