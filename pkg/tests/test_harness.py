import numpy as np
import pytest

from hydrobalance.config import Config, ConfigError, read_csv
from hydrobalance.harness import Check, ExperimentSpec, Report, emit_report, run_experiment, stationary_sweep


def test_spec_defaults_and_validation():
    s = ExperimentSpec.from_config(Config(experiment={"name": "hydro"}))
    assert s.options["replications"] == 20 and s.tolerances["ks_mean"] == 0.05
    with pytest.raises(ConfigError):
        ExperimentSpec.from_config(Config(experiment={"name": "nope"}))
    with pytest.raises(ConfigError):
        ExperimentSpec.from_config(Config(experiment={"name": "hydro", "reps": 3}))
    with pytest.raises(ConfigError):
        ExperimentSpec.from_config(Config(experiment={"name": "hydro", "tolerances": {"ks_mean": -1}}))
    with pytest.raises(ConfigError):
        ExperimentSpec.from_config(Config(experiment={"name": "hydro", "tolerances": {"ks": 0.1}}))


def test_report_passes_iff_all_checks_pass():
    r = Report("x", checks=[Check("a", 1.0, 0.1, 0.2), Check("b", 1.0, 0.3, 0.2)])
    assert not r.passed
    r.checks.pop()
    assert r.passed
    assert Report("empty").passed


def test_empty_report_writes_header_only(tmp_path):
    status = emit_report(Report("empty"), tmp_path)
    assert status == 0
    header, rows = read_csv(tmp_path / "report.csv")
    assert header[0] == "experiment" and rows == []


def test_routing_check_experiment():
    r = run_experiment(ExperimentSpec.from_config(Config(experiment={"name": "routing_check"})))
    assert r.passed
    assert r.check("law_abs[without]").value < 1e-12
    assert r.check("freq_z[with]").value < 4


def test_stationary_sweep_limits_improve_monotonically():
    bs = np.geomspace(1e-6, 1e3, 10)
    rows = stationary_sweep(bs)
    sup = [r[1] for r in rows]
    mean = [r[2] for r in rows]
    # toward b -> 0 the exponential limit, toward b -> inf the point mass at 0
    assert all(a < b for a, b in zip(sup, sup[1:]))
    assert all(a > b for a, b in zip(mean, mean[1:]))
    assert sup[0] < 1e-3
    assert mean[-1] < 0.01
    # first-order approach in b: sup error / b roughly constant near 0
    r = stationary_sweep([1e-6, 1e-5])
    assert r[1][1] / r[0][1] == pytest.approx(10, rel=0.05)


def test_stationary_limits_mean_tends_to_exponential_mean():
    rows = stationary_sweep([1e-7])
    assert rows[0][2] == pytest.approx(1 / 0.01, rel=1e-3)


def test_stage_errors_name_the_stage():
    from hydrobalance.harness import StageError, _stage

    def boom():
        raise ValueError("bad grid")

    with pytest.raises(StageError, match="'pde'"):
        _stage("pde", boom)
