import filecmp

import pytest
import yaml

from hydrobalance.cli import main
from hydrobalance.config import Config, ConfigError, fmt, load_config, read_csv, write_csv

SMALL = {
    "model": {"n": 100, "seed": 3},
    "snapshots": [0.25, 0.5],
    "des": {"replications": 2, "record_ranks": True, "tracked": [0]},
    "pde": {"x_max": 60.0, "dx": 0.05},
    "mv": {"N": 500, "dt": 0.01},
}


def _write(tmp_path, doc, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return str(p)


def test_defaults_and_round_trip():
    c = Config()
    assert c.model.n == 2000 and c.snapshots == (1.0, 5.0)
    assert Config.from_dict(c.to_dict()) == c


@pytest.mark.parametrize("doc", [
    {"modle": {}}, {"model": {"n": 10, "nn": 1}}, {"pde": {"dx": 0.01, "grid": 3}},
    {"snapshots": [2.0, 1.0]}, {"mv": {"mode": "fast"}}, {"des": {"replications": 0}},
    {"initial": {"law": "uniform", "width": 2}},
])
def test_unknown_or_invalid_rejected(doc):
    with pytest.raises((ConfigError, ValueError)):
        Config.from_dict(doc)


def test_csv_format(tmp_path):
    write_csv(tmp_path / "a.csv", ("t", "v", "k", "s"), [(1 / 3, 2.0, 7, "x"), (1e-20, 123456789012345.0, 0, "y")])
    text = (tmp_path / "a.csv").read_bytes().decode("utf-8")
    assert text == "t,v,k,s\n0.333333333333,2,7,x\n1e-20,1.23456789012e+14,0,y\n"
    assert fmt(True) == "true"


def _tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


@pytest.mark.parametrize("argv", [
    ["sim"], ["pde"], ["mv", "--mode", "self"], ["mv", "--mode", "pde-fed"], ["mv", "--mode", "stationary"],
    ["stationary"], ["routing-check", "--n", "7", "--ell", "3", "--replacement", "with"],
    ["experiment", "--name", "routing_check"],
])
def test_cli_rerun_from_manifest_is_byte_identical(tmp_path, argv):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--config", cfg, "--out", str(a), "--seed", "5"]) == 0
    assert main([argv[0], "--config", str(a / "manifest"), "--out", str(b)]) == 0
    assert _tree_equal(a, b)
    assert load_config(a / "manifest").seed == 5


def test_sim_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["sim", "--config", cfg, "--out", str(tmp_path), "--snapshots", "0.5"]) == 0
    header, rows = read_csv(tmp_path / "snapshot_0.5.csv")
    assert header == ["replication", "x"] and len(rows) == 200
    header, rows = read_csv(tmp_path / "stats.csv")
    assert header[:5] == ["t", "mean", "m2", "var", "stderr"] and len(rows) == 1
    header, rows = read_csv(tmp_path / "ranks.csv")
    assert header == ["r", "count"] and len(rows) == 100
    assert (tmp_path / "tracked.csv").exists()


def test_pde_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["pde", "--config", cfg, "--out", str(tmp_path), "--times", "0.5,1"]) == 0
    for name in ("v_0.5.csv", "v_1.csv", "macro.csv", "stationary.csv"):
        assert (tmp_path / name).exists()
    header, rows = read_csv(tmp_path / "v_1.csv")
    assert header == ["x", "v", "u"] and float(rows[0][1]) == 1.0
    assert read_csv(tmp_path / "macro.csv")[0] == ["t", "m_mac", "sigma_mac"]


def test_routing_columns(tmp_path):
    assert main(["routing-check", "--n", "5", "--ell", "2", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "routing.csv")
    assert header == ["r", "p_paper", "p_oracle", "abs_err"] and len(rows) == 5


def test_manifest_from_other_command_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["stationary", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["pde", "--config", str(tmp_path / "a" / "manifest"), "--out", str(tmp_path / "b")]) == 2
    assert "manifest" in capsys.readouterr().err


def test_failing_tolerance_gives_nonzero_exit(tmp_path):
    doc = {"experiment": {"name": "stationary_limits", "tolerances": {"dirac_mean": 1e-6}}}
    assert main(["experiment", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1
    header, rows = read_csv(tmp_path / "o" / "report.csv")
    assert header == ["experiment", "metric", "t", "value", "se", "tolerance", "passed"]
    assert {r[1]: r[6] for r in rows}["dirac_mean"] == "false"


def test_invalid_config_exit_status(tmp_path):
    assert main(["sim", "--config", _write(tmp_path, {"model": {"n": 10, "bogus": 1}}), "--out", str(tmp_path)]) == 2
