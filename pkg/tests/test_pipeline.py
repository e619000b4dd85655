import json
import math
from pathlib import Path

import pandas as pd
import pytest

from armington import cli, pipeline
from armington.errors import ArmingtonError

DEMO = Path("data/demo")


def write_cfg(path: Path, **kv) -> Path:
    lines = [f"{k} = {v}" for k, v in kv.items()]
    cfg = path / "run.cfg"
    cfg.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return cfg


class TestRunConfig:
    def test_defaults_and_relative_paths(self, tmp_path):
        cfg_path = write_cfg(tmp_path, transactions="tx.csv", meat="chicken")
        cfg = pipeline.RunConfig.from_file(cfg_path)
        assert cfg.meat == "chicken"
        assert cfg.min_obs == 9 and cfg.hac_bandwidth == 5
        assert cfg.pork_split_threshold == 0.8
        assert cfg.transactions == str(tmp_path / "tx.csv")

    def test_unknown_key_rejected(self, tmp_path):
        cfg_path = write_cfg(tmp_path, bogus="1")
        with pytest.raises(ArmingtonError, match="bogus"):
            pipeline.RunConfig.from_file(cfg_path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\n\nmeat = pork  # trailing\n")
        assert pipeline.RunConfig.from_file(cfg).meat == "pork"

    def test_missing_required_file(self, tmp_path):
        cfg_path = write_cfg(tmp_path, transactions="absent.csv")
        cfg = pipeline.RunConfig.from_file(cfg_path)
        with pytest.raises(ArmingtonError, match="absent.csv"):
            cfg.require("transactions")


class TestDemoTariff:
    def test_walkthrough_values(self, tmp_path):
        cfg = pipeline.RunConfig.from_file(DEMO / "demo.cfg")
        cfg.output_dir = str(tmp_path)
        path = pipeline.cmd_tariff(cfg)
        table = pd.read_csv(path).set_index(["country", "period"])
        mx = table.loc["MX"]
        # in-quota ad valorem until cumulative-before passes 10,000 kg in July
        assert mx.loc["2007-04", "T"] == pytest.approx(math.log(1.346), abs=1e-6)
        assert mx.loc["2007-06", "applied"].startswith("quota:")
        assert mx.loc["2007-07", "applied"] == "beef mfn"
        assert mx.loc["2007-07", "T"] == pytest.approx(math.log(1.385), abs=1e-6)
        # fresh JFY limit restores the concession
        assert mx.loc["2008-04", "applied"].startswith("quota:")
        assert (table.loc["LDC1", "T"] == 0.0).all()

    def test_gps_tariff_on_pork_record(self, tmp_path):
        tx = tmp_path / "tx.csv"
        tx.write_text("period,country,item_id,value_jpy,quantity_kg\n"
                      "2010-05,DK,33,4000000,10000\n")  # c = 400 JPY/kg
        cfg = pipeline.RunConfig.from_file(DEMO / "demo.cfg")
        cfg.transactions = str(tx)
        cfg.quota = ""
        cfg.meat = "pork"
        cfg.output_dir = str(tmp_path)
        path = pipeline.cmd_tariff(cfg)
        row = pd.read_csv(path).iloc[0]
        assert row["T"] == pytest.approx(math.log(546.35 / 400.0), abs=1e-9)
        assert row["applied"] == "pork gps baseline"

    def test_unmatched_coordinates_error(self, tmp_path):
        tx = tmp_path / "tx.csv"
        tx.write_text("period,country,item_id,value_jpy,quantity_kg\n"
                      "1999-01,XX,3,100,10\n")  # before any schedule window
        cfg = pipeline.RunConfig.from_file(DEMO / "demo.cfg")
        cfg.transactions = str(tx)
        cfg.output_dir = str(tmp_path)
        with pytest.raises(ArmingtonError, match="1999-01"):
            pipeline.cmd_tariff(cfg)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg_path = write_cfg(root, output_dir="out", seed="7",
                         sim_n_months="192", sim_n_countries="6")
    cfg = pipeline.RunConfig.from_file(cfg_path)
    pipeline.cmd_simulate(cfg)
    return root / "out"


class TestSimulateAndReport:

    def test_simulate_emits_consumable_files(self, sim_dir):
        for name in ("transactions.csv", "fx.csv", "schedule.csv",
                     "domestic.csv", "truth.json", "synthetic.cfg"):
            assert (sim_dir / name).exists()
        truth = json.loads((sim_dir / "truth.json").read_text())
        assert truth["sigma"] == 4.0
        assert len(truth["q_index"]) == 192

    def test_simulate_deterministic(self, sim_dir, tmp_path):
        cfg_path = write_cfg(tmp_path, output_dir="out2", seed="7",
                             sim_n_months="192", sim_n_countries="6")
        pipeline.cmd_simulate(pipeline.RunConfig.from_file(cfg_path))
        for name in ("transactions.csv", "fx.csv", "domestic.csv", "truth.json"):
            assert (tmp_path / "out2" / name).read_bytes() == \
                (sim_dir / name).read_bytes()

    def test_report_end_to_end(self, sim_dir):
        cfg = pipeline.RunConfig.from_file(sim_dir / "synthetic.cfg")
        report_path = pipeline.cmd_report(cfg)
        text = report_path.read_text()
        assert "First-stage estimation" in text
        assert "FE (LS)" in text and "FE (IV)" in text
        assert "Kleibergen-Paap rk LM" in text
        assert "Hansen J" in text
        assert "sigma =" in text
        assert "Second-stage estimation" in text
        assert "rho =" in text
        qhat = pd.read_csv(sim_dir / "qhat_beef.csv")
        assert len(qhat) == 192
        assert qhat["qhat"].iloc[-1] == 1.0 and qhat["se"].iloc[-1] == 0.0

    def test_estimate_commands_standalone(self, sim_dir):
        cfg = pipeline.RunConfig.from_file(sim_dir / "synthetic.cfg")
        first_files = pipeline.cmd_estimate_first(cfg)
        second_files = pipeline.cmd_estimate_second(cfg)
        assert all(p.exists() for p in first_files + second_files)
        table = pd.read_csv([p for p in first_files if p.suffix == ".csv"
                             and "first" in p.name][0])
        sigma = table.query("section == 'delta' and name == 'sigma'")["value"]
        assert 2.0 < float(sigma.iloc[0]) < 6.0

    def test_typical_run_recovery_band(self, tmp_path):
        # full-size synthetic run through the file pipeline, frozen seed
        cfg_path = write_cfg(tmp_path, output_dir="out", seed="99",
                             sim_n_months="300", sim_n_countries="10")
        pipeline.cmd_simulate(pipeline.RunConfig.from_file(cfg_path))
        run_cfg = pipeline.RunConfig.from_file(tmp_path / "out" / "synthetic.cfg")
        pipeline.cmd_estimate_first(run_cfg)
        table = pd.read_csv(tmp_path / "out" / "first_stage_beef.csv")
        sigma = float(table.query("section == 'delta' and name == 'sigma'")
                      ["value"].iloc[0])
        assert 3.6 <= sigma <= 4.4

    def test_exactly_identified_prints_zero_hansen(self, sim_dir, tmp_path):
        cfg = pipeline.RunConfig.from_file(sim_dir / "synthetic.cfg")
        cfg.instrument_mode = "none"
        cfg.output_dir = str(tmp_path)
        pipeline.cmd_estimate_first(cfg)
        table = pd.read_csv(tmp_path / "first_stage_beef.csv")
        j = table.query("section == 'test' and name == 'hansen_j'")
        assert float(j["value"].iloc[0]) == 0.0
        assert (tmp_path / "first_stage_beef.txt").read_text().count("Hansen J")


class TestPorkSplitFlow:
    def test_split_reports(self, tmp_path):
        # two price classes around the 0.8 KJPY/kg threshold
        rows = ["period,country,item_id,value_jpy,quantity_kg"]
        fx_rows = ["period,country,jpy_per_lcu"]
        import numpy as np
        rng = np.random.default_rng(0)
        for t in range(24):
            period = f"{2010 + t//12}-{t % 12 + 1:02d}"
            # regular exporters must straddle the gate price: inside the
            # band the levy pins the post-tariff price at the floor, and an
            # all-band panel has a constant regressor (rank error)
            for i, country in enumerate(["AA", "BB", "CC"]):
                cif = 520.0 * math.exp(0.10 * rng.standard_normal())
                rows.append(f"{period},{country},33,{cif*1000:.2f},1000")
                fx_rows.append(f"{period},{country},{1.0 + 0.1*i}")
            # two premium exporters (a single one saturates the dummies)
            for country in ("PP", "QQ"):
                cif = 1200.0 * math.exp(0.05 * rng.standard_normal())
                rows.append(f"{period},{country},33,{cif*1000:.2f},1000")
                fx_rows.append(f"{period},{country},2.0")
        (tmp_path / "tx.csv").write_text("\n".join(rows) + "\n")
        (tmp_path / "fx.csv").write_text("\n".join(fx_rows) + "\n")
        cfg = pipeline.RunConfig.from_file(DEMO / "demo.cfg")
        cfg.transactions = str(tmp_path / "tx.csv")
        cfg.fx = str(tmp_path / "fx.csv")
        cfg.quota = ""
        cfg.meat = "pork"
        cfg.min_obs = 5
        cfg.output_dir = str(tmp_path / "out")
        paths = pipeline.cmd_estimate_first(cfg)
        names = {p.name for p in paths}
        assert "first_stage_pork_regular.txt" in names
        assert "first_stage_pork_prime.txt" in names
        # premium fx is constant -> instruments unusable -> channel block
        prime = (tmp_path / "out" / "first_stage_pork_prime.txt").read_text()
        assert "Test regression" in prime
        assert "[based on FE (LS)]" in prime


class TestIngest:
    def test_aggregates_table(self, tmp_path):
        cfg = pipeline.RunConfig.from_file(DEMO / "demo.cfg")
        cfg.output_dir = str(tmp_path)
        path = pipeline.cmd_ingest(cfg)
        table = pd.read_csv(path)
        assert set(table.columns) == {"country", "period", "value_jpy",
                                      "quantity_kg", "cif_jpy_per_kg"}
        mx = table.query("country == 'MX' and period == '2007-04'").iloc[0]
        assert mx["cif_jpy_per_kg"] == pytest.approx(2000.0)
        assert mx["quantity_kg"] == pytest.approx(4000.0)


class TestCli:
    def test_tariff_happy_path(self, tmp_path, capsys):
        import shutil
        demo = tmp_path / "demo"
        shutil.copytree(DEMO, demo)
        rc = cli.main(["tariff", "--config", str(demo / "demo.cfg")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "tariff_beef.csv" in out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, transactions="absent.csv")
        rc = cli.main(["tariff", "--config", str(cfg_path)])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_seed_and_meat_overrides(self, tmp_path):
        cfg_path = write_cfg(tmp_path, output_dir="o", sim_n_months="24",
                             sim_n_countries="3")
        rc = cli.main(["simulate", "--config", str(cfg_path), "--seed", "3",
                       "--meat", "chicken"])
        assert rc == 0
        truth = json.loads((tmp_path / "o" / "truth.json").read_text())
        assert truth["seed"] == 3
        tx = pd.read_csv(tmp_path / "o" / "transactions.csv")
        assert (tx["item_id"] == 68).all()
