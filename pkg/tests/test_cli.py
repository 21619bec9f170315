import json
import os

import pytest

from attnsim.cli import main


def _write_config(path, **overrides):
    cfg = {"n": 16, "d": 4, "iterations": 32, "keep_percent": 5.0,
           "seed": 3, "n_queries": 3, "top_k": 2, "planted": 2}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


def test_gen_then_run_from_files(tmp_path):
    data = tmp_path / "data"
    assert main(["gen", "--out", str(data), "--n", "16", "--d", "4",
                 "--planted", "2", "--queries", "3", "--seed", "3"]) == 0
    for name in ("key.csv", "value.csv", "queries.csv"):
        assert (data / name).exists()
    cfgp = _write_config(tmp_path / "cfg.json")
    out = tmp_path / "report.json"
    rc = main(["run", "--config", str(cfgp),
               "--key", str(data / "key.csv"),
               "--value", str(data / "value.csv"),
               "--queries", str(data / "queries.csv"),
               "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["aggregate"]["queries"] == 3
    assert report["config"]["n"] == 16


def test_run_synthesizes_when_no_data_flags(tmp_path, capsys):
    cfgp = _write_config(tmp_path / "cfg.json")
    assert main(["run", "--config", str(cfgp)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["aggregate"]["queries"] == 3


def test_repeated_runs_byte_identical(tmp_path):
    cfgp = _write_config(tmp_path / "cfg.json")
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert main(["run", "--config", str(cfgp), "--out", str(out1)]) == 0
    assert main(["run", "--config", str(cfgp), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_seed_override_changes_report(tmp_path):
    cfgp = _write_config(tmp_path / "cfg.json")
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert main(["run", "--config", str(cfgp), "--out", str(out1)]) == 0
    assert main(["run", "--config", str(cfgp), "--out", str(out2), "--seed", "99"]) == 0
    assert out1.read_bytes() != out2.read_bytes()
    assert json.loads(out2.read_text())["config"]["seed"] == 99


def test_sweep_writes_one_report_per_cell(tmp_path):
    cfgp = tmp_path / "sweep.json"
    cfgp.write_text(json.dumps({
        "n": 16, "d": 4, "seed": 3, "n_queries": 2, "top_k": 2, "planted": 0,
        "iteration_fractions": [0.5, 0.125], "keep_percents": [5, 10],
    }))
    outdir = tmp_path / "cells"
    assert main(["sweep", "--config", str(cfgp), "--out", str(outdir)]) == 0
    names = sorted(os.listdir(outdir))
    assert names == ["report_m0.125_t10.json", "report_m0.125_t5.json",
                     "report_m0.5_t10.json", "report_m0.5_t5.json"]
    for name in names:
        json.loads((outdir / name).read_text())


def test_check_verb_passes():
    assert main(["check"]) == 0


def test_missing_config_is_input_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2


def test_bad_config_key_is_input_error(tmp_path):
    cfgp = tmp_path / "cfg.json"
    cfgp.write_text(json.dumps({"n": 8, "d": 4, "iterations": 2, "wat": 1}))
    assert main(["run", "--config", str(cfgp)]) == 2


def test_malformed_csv_is_input_error(tmp_path):
    cfgp = _write_config(tmp_path / "cfg.json")
    bad = tmp_path / "key.csv"
    bad.write_text("1,2\n3,oops\n")
    rc = main(["run", "--config", str(cfgp), "--key", str(bad),
               "--value", str(bad), "--queries", str(bad)])
    assert rc == 2


def test_partial_data_flags_rejected(tmp_path):
    cfgp = _write_config(tmp_path / "cfg.json")
    assert main(["run", "--config", str(cfgp), "--key", "k.csv"]) == 2


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["run"])  # missing --config
    assert exc.value.code == 2
