import json
import subprocess
import sys

import pytest

from interaction_pursuit.cli import build_parser, main
from interaction_pursuit.core import save_csv
from interaction_pursuit.simulation import ExperimentSpec, builtin_model, generate


@pytest.fixture(scope="module")
def m1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "m1.csv"
    save_csv(generate(builtin_model("M1"), 200, 300, seed=3, test_size=0).train, path)
    return path


@pytest.fixture(scope="module")
def m3_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "m3.csv"
    save_csv(generate(builtin_model("M3"), 200, 300, seed=1, test_size=0).train, path)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_screen_recovers_m1_interaction_variables(m1_csv, capsys):
    code, out, _ = run(["screen", "--input", m1_csv, "--response", "y", "--method", "ip", "--top-d", "auto"], capsys)
    assert code == 0
    res = json.loads(out)
    assert {1, 5} <= set(res["a_hat"])
    assert [1, 5] in res["i_hat"]
    code, out, _ = run(["screen", "--input", m1_csv, "--format", "csv", "--method", "sis"], capsys)
    assert code == 0 and out.startswith("kind,feature\n") and "main,x1\n" in out


def test_screen_input_errors(tmp_path, m1_csv, capsys):
    missing = tmp_path / "nope.csv"
    code, _, err = run(["screen", "--input", missing], capsys)
    assert code == 2 and str(missing) in err and len(err.strip().splitlines()) == 1
    code, _, err = run(["screen", "--input", m1_csv, "--top-d", "0"], capsys)
    assert code == 2 and "budget must be positive" in err
    code, _, err = run(["screen", "--input", m1_csv, "--response", "zz"], capsys)
    assert code == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,y\n1,2\nfoo,3\n")
    code, _, err = run(["screen", "--input", bad], capsys)
    assert code == 2 and "line 3" in err


def test_select_l1sica_finds_interaction(m3_csv, tmp_path, capsys):
    out = tmp_path / "fit.json"
    code, _, _ = run(["select", "--input", m3_csv, "--penalty", "l1sica", "--tune", "bic", "--output", out], capsys)
    assert code == 0
    text = out.read_text()
    assert "x1:x5" in text
    assert json.loads(text)["kkt_max_violation"] is None
    code, csv_out, _ = run(["select", "--input", m3_csv, "--format", "csv"], capsys)
    assert code == 0 and "x1:x5," in csv_out


def test_select_reuses_screening_file(m3_csv, tmp_path, capsys):
    scr = tmp_path / "s.json"
    assert run(["screen", "--input", m3_csv, "--output", scr], capsys)[0] == 0
    code, a, _ = run(["select", "--input", m3_csv, "--screening", scr], capsys)
    code2, b, _ = run(["select", "--input", m3_csv], capsys)
    assert code == code2 == 0 and a == b


def test_select_validation(m3_csv, capsys):
    code, _, err = run(["select", "--input", m3_csv, "--penalty", "lasso", "--tune", "cv", "--folds", "1"], capsys)
    assert code == 2
    code, _, err = run(["select", "--input", m3_csv, "--penalty", "l1sica", "--tune", "cv"], capsys)
    assert code == 2 and "BIC required for l1sica" in err
    code, _, err = run(["select", "--input", m3_csv, "--penalty", "lasso", "--tune", "none"], capsys)
    assert code == 2 and "--lam0" in err


def test_select_lasso_cv_and_fixed(m3_csv, capsys):
    code, out, _ = run(["select", "--input", m3_csv, "--penalty", "lasso", "--folds", "3", "--seed", "4"], capsys)
    assert code == 0 and json.loads(out)["converged"]
    code, out, _ = run(["select", "--input", m3_csv, "--penalty", "lasso", "--tune", "none", "--lam0", "1e6"], capsys)
    assert code == 0 and json.loads(out)["coefficients"] == []


def test_simulate_errors(capsys):
    code, _, err = run(["simulate", "table1-setting1", "--reps", "0"], capsys)
    assert code == 2
    code, _, err = run(["simulate", "table99"], capsys)
    assert code == 2 and "table1-setting1" in err and "table4-setting1" in err
    code, out, _ = run(["simulate", "--list"], capsys)
    assert code == 0 and "tableA4" in out.split()


def _tiny_spec(path, kind="screening", methods=("IP", "SIS2")):
    spec = ExperimentSpec("tiny", kind, (builtin_model("M2"), builtin_model("M4")), 60, 40, 3, 2,
                          methods, test_size=200)
    path.write_text(json.dumps(spec.to_dict()))
    return spec


def test_simulate_spec_round_trip(tmp_path, capsys):
    spec = _tiny_spec(tmp_path / "spec.json")
    out = tmp_path / "table.json"
    code, _, _ = run(["simulate", "--spec", tmp_path / "spec.json", "--format", "json", "--output", out,
                      "--threads", "1"], capsys)
    assert code == 0
    table = json.loads(out.read_text())
    assert ExperimentSpec.from_dict(table["metadata"]["spec"]) == spec
    out2 = tmp_path / "again.json"
    assert run(["simulate", "--spec", out, "--format", "json", "--output", out2, "--threads", "1"], capsys)[0] == 0
    assert out2.read_text() == out.read_text()
    assert (tmp_path / "table.json.timing.json").exists()


def test_oracle_queries(capsys):
    code, out, _ = run(["oracle", "cov-xsq-ysq", "1", "--beta", "1=1", "--gamma", "1:2=1"], capsys)
    assert code == 0 and out.strip() == "4"
    code, out, _ = run(["oracle", "snr", "--model", "M1"], capsys)
    assert code == 0 and out.strip() == "2.72"
    code, out, _ = run(["oracle", "cov-xsq-ysq", "3", "--beta", "1=1"], capsys)
    assert code == 0 and out.strip() == "0"
    code, out, _ = run(["oracle", "cov-xsq-ysq", "1", "--covariance", "equicorr", "--rho", "0.3",
                        "--gamma", "1:2=1", "--format", "json"], capsys)
    assert code == 0 and json.loads(out)["value"] == pytest.approx(2.9)
    code, out, _ = run(["oracle", "snr", "x1:x5", "--model", "M1"], capsys)
    assert out.strip() == "1.44"
    code, _, err = run(["oracle", "omega", "--beta", "1=1"], capsys)
    assert code == 2
    code, _, err = run(["oracle", "snr", "--model", "M1", "--example", "2"], capsys)
    assert code == 2


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# oracle settings\ncovariance = equicorr\nrho = 0.3\ngamma = 1:2=1\n")
    code, out, _ = run(["oracle", "cov-xsq-ysq", "3", "--config", cfg], capsys)
    assert code == 0 and float(out) == pytest.approx(0.576)
    code, out, _ = run(["oracle", "cov-xsq-ysq", "3", "--config", cfg, "--rho", "0"], capsys)
    assert code == 0 and out.strip() == "0"
    cfg.write_text("colour = blue\n")
    code, _, err = run(["oracle", "snr", "--config", cfg], capsys)
    assert code == 2 and "unknown config key" in err
    cfg.write_text("rho 0.3\n")
    assert run(["oracle", "snr", "--config", cfg], capsys)[0] == 2


def _flags(parser):
    return {o for a in parser._actions for o in a.option_strings if o.startswith("--")}


@pytest.mark.parametrize("command", ["screen", "select", "simulate", "oracle"])
def test_help_lists_every_flag(command, capsys):
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    assert main([command, "--help"]) == 0
    text = capsys.readouterr().out
    for flag in _flags(sub):
        assert flag in text


def test_output_dir_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("IP_OUTPUT_DIR", str(tmp_path / "outdir"))
    code, out, _ = run(["oracle", "snr", "--model", "M4", "--output", "/nonexistent/place/snr.txt"], capsys)
    assert code == 0 and out == ""
    assert (tmp_path / "outdir" / "snr.txt").read_text().strip() == "8"
    run(["oracle", "snr", "--model", "M4"], capsys)
    assert (tmp_path / "outdir" / "oracle.txt").exists()


def test_bit_reproducible_across_threads(m3_csv, tmp_path, capsys):
    spec_path = tmp_path / "spec.json"
    _tiny_spec(spec_path, "selection", ("IP-L1+SICA", "SIS2-Lasso", "Oracle"))
    commands = [
        ["screen", "--input", m3_csv, "--method", "dcsis"],
        ["select", "--input", m3_csv, "--penalty", "lasso", "--folds", "4"],
        ["select", "--input", m3_csv],
        ["oracle", "snr", "--model", "M3", "--rho", "0.5"],
        ["simulate", "--spec", spec_path, "--format", "csv"],
    ]
    for cmd in commands:
        outs = []
        for threads in ("1", "8"):
            code, out, _ = run(cmd + ["--seed", "11", "--threads", threads], capsys)
            assert code == 0
            outs.append(out)
        assert outs[0] == outs[1], cmd


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "interaction_pursuit.cli", "oracle", "snr", "--model", "M4"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "8"
    r = subprocess.run([sys.executable, "-m", "interaction_pursuit.cli", "frobnicate"],
                       capture_output=True, text=True)
    assert r.returncode == 2
