import csv
import json

import pytest

from specal.cli import main

LINEAR = {"a": 0.0, "b": 0.5, "c": 390.0}


@pytest.fixture
def sim(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n": 700, "seed": 2, "mapping": LINEAR, "map_illuminant": "fluorescent"}))
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim"


def test_simulate_outputs(sim):
    for name in ("dif.csv", "dir.csv", "illuminant.csv", "map_dif.csv", "map_illuminant.csv",
                 "truth.json", "truth_sensitivity.csv", "truth_efficiency.csv", "basis.csv", "mean_s.csv"):
        assert (sim / name).is_file(), name
    assert json.loads((sim / "truth.json").read_text())["mapping"]["b"] == 0.5


def test_full_chain(sim, tmp_path, capsys):
    d = tmp_path
    assert main(["basis", "--dataset", "synthetic", "--rank", "7", "--eta-rank", "7",
                 "--mean-out", str(d / "mean.csv"), "--out", str(d / "basis.csv")]) == 0
    assert (d / "basis.csv").read_bytes() == (sim / "basis.csv").read_bytes()
    assert main(["map", "--mode", "peaks", "--obs", str(sim / "map_dif.csv"),
                 "--illuminant", str(sim / "map_illuminant.csv"), "--mean-s", str(d / "mean.csv"),
                 "--out", str(d / "map.json")]) == 0
    assert json.loads((d / "map.json").read_text())["mode"] == "peaks"
    assert main(["calibrate", "--obs-dir", str(sim), "--map", str(d / "map.json"),
                 "--illuminant", str(sim / "illuminant.csv"), "--basis-s", str(d / "basis.csv"),
                 "--basis-eta", "fourier:7", "--out", str(d / "sol.json")]) == 0
    capsys.readouterr()
    assert main(["eval", "--est", str(d / "sol.json"), "--truth", str(sim / "truth.json"),
                 "--map", str(d / "map.json"), "--scene", "chain", "--out", str(d / "rep.csv")]) == 0
    assert capsys.readouterr().out.startswith("RE ")
    [row] = [r for r in csv.DictReader((d / "rep.csv").read_text().splitlines()) if r["scene"] == "chain"]
    assert float(row["re"]) <= 1e-6
    assert float(row["mapping_re"]) <= 1e-9
    assert float(row["efficiency_cosine"]) == pytest.approx(1.0, abs=1e-9)


def test_map_icp(sim, tmp_path):
    assert main(["map", "--mode", "icp", "--obs", str(sim / "dif.csv"), "--illuminant",
                 str(sim / "illuminant.csv"), "--mean-s", str(sim / "mean_s.csv"), "--iters", "20",
                 "--out", str(tmp_path / "m.json")]) == 0
    assert set(json.loads((tmp_path / "m.json").read_text())) >= {"a", "b", "c", "mode"}


def test_eval_against_triplet_csv(sim, tmp_path):
    assert main(["calibrate", "--obs-dir", str(sim), "--map", str(sim / "truth.json"),
                 "--illuminant", str(sim / "illuminant.csv"), "--basis-s", str(sim / "basis.csv"),
                 "--basis-eta", str(sim / "basis.csv"), "--out", str(tmp_path / "sol.json")]) == 4
    # truth.json is not a map file; write the mapping on its own
    (tmp_path / "m.json").write_text(json.dumps(LINEAR))
    assert main(["calibrate", "--obs-dir", str(sim), "--map", str(tmp_path / "m.json"),
                 "--illuminant", str(sim / "illuminant.csv"), "--basis-s", str(sim / "basis.csv"),
                 "--basis-eta", str(sim / "basis.csv"), "--out", str(tmp_path / "sol.json")]) == 0
    assert main(["eval", "--est", str(tmp_path / "sol.json"), "--truth", str(sim / "truth_sensitivity.csv"),
                 "--out", str(tmp_path / "rep.json")]) == 0
    rep = json.loads((tmp_path / "rep.json").read_text())["reports"][0]
    assert rep["re"] <= 1e-6 and rep["efficiency_cosine"] is None


def test_pipeline_command(tmp_path, capsys):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"out_dir": "out", "n": 700, "scenes": [{"name": "a", "mapping": LINEAR}]}))
    assert main(["pipeline", "--config", str(cfg)]) == 0
    assert "a: RE" in capsys.readouterr().out
    assert (tmp_path / "out" / "report.csv").is_file()
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path / "other"), "--jobs", "1"]) == 0
    assert (tmp_path / "other" / "a" / "solution.json").is_file()


def test_validate_command(capsys):
    assert main(["validate"]) == 0
    assert all(line.startswith("[PASS]") for line in capsys.readouterr().out.splitlines())
    assert main(["validate", "--n", "20"]) == 2
    assert "[FAIL] pixels" in capsys.readouterr().out
    assert main(["validate", "--b-s", "24", "--b-eta", "24"]) == 2


def test_errors_are_json_records(tmp_path, capsys):
    assert main(["calibrate", "--obs-dir", str(tmp_path), "--map", str(tmp_path / "none.json"),
                 "--illuminant", "x.csv", "--basis-s", str(tmp_path / "none.csv"), "--out",
                 str(tmp_path / "s.json")]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "ConfigError" and rec["exit_code"] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("wavelength_nm,value\n400,abc\n")
    assert main(["map", "--mode", "peaks", "--obs", str(bad), "--illuminant", str(bad),
                 "--mean-s", str(bad), "--out", str(tmp_path / "m.json")]) == 4
    assert not (tmp_path / "m.json").exists()


def test_basis_channel_subset(tmp_path):
    assert main(["basis", "--dataset", "synthetic", "--channels", "g", "--rank", "3",
                 "--out", str(tmp_path / "g.csv")]) == 0
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "wavelength_nm,g_0,g_1,g_2"
    assert main(["basis", "--dataset", "synthetic", "--channels", "xy", "--out", str(tmp_path / "x.csv")]) == 2
