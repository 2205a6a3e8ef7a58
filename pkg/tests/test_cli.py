import json

import pytest

from trapped_walks.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

SPEED_CONFIG = """
suite = "speed"
seed = 21
beta = 2.0
horizon = 300.0
calibration_horizon = 30000.0
seeds_per_check = 1

[traps]
kind = "unit"
"""


def test_print_regime_for_a_builtin_law(capsys):
    assert main(["print-regime", "--law", "A", "--beta", "1.1"]) == EXIT_OK

    out = capsys.readouterr().out
    assert "beta^2*mu" in out
    assert "annealed CLT" in out


def test_print_regime_with_inline_pmf(capsys):
    code = main(["print-regime", "--pmf", '{"0": 0.5, "1": 0.2, "2": 0.2, "3": 0.1}', "--beta", "1.05"])

    assert code == EXIT_OK
    assert "0.945" in capsys.readouterr().out


def test_bad_pmf_is_a_config_error(capsys):
    assert main(["print-regime", "--pmf", '{"0": 0.6, "2": 0.6}', "--beta", "1.1"]) == EXIT_CONFIG
    assert "sum to 1.2" in capsys.readouterr().err


def test_supercritical_pmf_is_a_config_error():
    assert main(["print-regime", "--pmf", '{"0": 0.2, "2": 0.8}', "--beta", "1.1"]) == EXIT_CONFIG


def test_beta_outside_the_domain_is_a_runtime_error():
    assert main(["print-regime", "--law", "A", "--beta", "1.0"]) == EXIT_RUNTIME


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_CONFIG
    assert "Cannot read config" in capsys.readouterr().err


def test_clt_command_refuses_a_speed_config(tmp_path):
    path = tmp_path / "speed.toml"
    path.write_text(SPEED_CONFIG, encoding="utf-8")

    assert main(["clt", "--config", str(path)]) == EXIT_CONFIG


def test_invalid_threads_flag_exits_through_argparse(tmp_path):
    with pytest.raises(SystemExit):
        main(["speed", "--config", str(tmp_path / "x.toml"), "--threads", "0"])


def test_speed_run_writes_identical_reports(tmp_path, capsys):
    path = tmp_path / "speed.toml"
    path.write_text(SPEED_CONFIG, encoding="utf-8")
    out = tmp_path / "results"

    first = main(["run", str(path), "--out", str(out)])
    snapshot = {p.name: p.read_bytes() for p in out.iterdir()}
    second = main(["speed", "--config", str(path), "--out", str(out)])

    assert first == second
    assert {"speed.json", "speed.csv", "speed_speed.csv"} <= set(snapshot)
    assert {p.name: p.read_bytes() for p in out.iterdir()} == snapshot
    report = json.loads(snapshot["speed.json"])
    assert report["config"]["seed"] == 21
    assert snapshot["speed.csv"].decode().startswith("# config_hash=" + report["config_hash"])
    assert "suite=speed" in capsys.readouterr().out
