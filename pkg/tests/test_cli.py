import json
import os
import pathlib

import pytest

from flowcast import cli
from flowcast.config import ConfigError, load_config, subseed


def write_config(tmp_path, **kw):
    text = (
        '[case]\npath = "wscc9"\n'
        "[dataset]\ntrain = 120\nval = 30\ntest = 40\n"
        "[train]\nepochs = {epochs}\n"
        "[eval]\ntrials = 4\nsubset = 20\n"
        '[sweep]\nsteps = 1\ncandidate_pool = 2\nepochs = 2\n'
        'train = 100\nval = 20\ntest = 20\nmodels = ["lr"]\n'
        '[placement]\nkind = "list"\nbuses = [1, 2, 3]\n'
        "[run]\nseed = {seed}\nout = '{out}'\nmodels = ['lr', 'pic']\n"
    ).format(epochs=kw.get("epochs", 4), seed=kw.get("seed", 5),
             out=str(tmp_path / "out"))
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    return path


def run(args):
    return cli.main([str(a) for a in args])


def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config(None, overrides={"run.seed": 99})
    assert cfg["run.seed"] == 99
    assert cfg["train.epochs"] == 200
    assert cfg["noise.kind"] == "gmm"


def test_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[dataset]\nrows = 5\n")
    with pytest.raises(ConfigError, match="rows"):
        load_config(path)


def test_config_bad_toml_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[dataset\n")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(path)


def test_subseed_stable():
    assert subseed(1, "noise") == subseed(1, "noise")
    assert subseed(1, "noise") != subseed(1, "scenario")
    assert subseed(1, "noise") != subseed(2, "noise")


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = load_config(None)
    monkeypatch.setenv("FLOWCAST_SEED", "1234")
    assert cfg.master_seed == 1234


def test_gen_train_eval_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run(["gen", "-c", cfg]) == 0
    ddir = tmp_path / "out" / "dataset"
    header = (ddir / "features.csv").read_text().splitlines()[0]
    # buses 1,2,3 of the 9-bus system each meter one incident branch:
    # 3 voltage + 3 current phasors, two components each
    assert len(header.split(",")) == 12

    assert run(["train", "-c", cfg, "--model", "all"]) == 0
    assert (tmp_path / "out" / "estimators" / "lr.json").is_file()
    assert (tmp_path / "out" / "estimators" / "pic.json").is_file()

    assert run(["eval", "-c", cfg]) == 0
    table3 = (tmp_path / "out" / "report" / "table3.csv").read_text()
    assert "lr," in table3 and "svr,n/a" in table3


def test_gen_rerun_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    assert run(["gen", "-c", cfg]) == 0
    ddir = tmp_path / "out" / "dataset"
    first = {p.name: p.read_bytes() for p in ddir.iterdir()}
    assert run(["gen", "-c", cfg]) == 0
    second = {p.name: p.read_bytes() for p in ddir.iterdir()}
    assert first == second


def test_lse_sweep_report(tmp_path):
    cfg = write_config(tmp_path)
    assert run(["gen", "-c", cfg]) == 0
    assert run(["train", "-c", cfg, "--model", "lr,pic"]) == 0
    assert run(["eval", "-c", cfg]) == 0
    assert run(["lse", "-c", cfg, "--samples", "60"]) == 0
    assert run(["sweep", "-c", cfg]) == 0
    assert run(["report", "-c", cfg]) == 0
    rep = tmp_path / "out" / "report"
    manifest = json.loads((rep / "run-manifest.json").read_text())
    assert manifest["master_seed"] == 5
    assert set(manifest["artifacts"]) == {"table1.csv", "table3.csv",
                                          "sweep.csv", "sweep.svg"}


def test_report_lists_missing_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run(["report", "-c", cfg]) == cli.EXIT_INPUT
    err = capsys.readouterr().err
    assert "table1.csv" in err and "sweep.svg" in err


def test_missing_case_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run(["gen", "-c", cfg, "--case", str(tmp_path / "nope.m")]) == cli.EXIT_INPUT
    assert "nope.m" in capsys.readouterr().err


def test_svr_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run(["gen", "-c", cfg]) == 0
    assert run(["train", "-c", cfg, "--model", "svr"]) == cli.EXIT_UNSUPPORTED
    assert "out of scope" in capsys.readouterr().err


def test_missing_dataset_message(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run(["train", "-c", cfg, "--model", "lr"]) == cli.EXIT_INPUT
    assert "flowcast gen" in capsys.readouterr().err


def test_selftest_passes(capsys):
    assert run(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 12 and "FAIL" not in out
