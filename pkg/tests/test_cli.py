"""Study runner: configuration handling, CSV format, exit codes."""
from __future__ import annotations

import numpy as np
import pytest

from pni.cli import (
    EXIT_CONFIG,
    EXIT_SIM,
    ConfigError,
    ExperimentSpec,
    emit_csv,
    main,
    parse_overrides,
    read_config_file,
    run,
)
from pni.sim import Trajectory


def read(path):
    return path.read_text(encoding="utf-8")


# ── override validation ──────────────────────────────────────────────────────


def test_unknown_study_rejected():
    with pytest.raises(ConfigError):
        parse_overrides("A9", {})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_overrides("A1", {"alhpa": "1.0"})


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        parse_overrides("A1", {"alpha": "fast"})


def test_known_keys_parse():
    parsed = parse_overrides("A1", {"alpha": "2.5", "x0": "1,-1", "record_every": "5"})
    assert parsed == {"alpha": 2.5, "x0": (1.0, -1.0), "record_every": 5}


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nalpha = 2.0\n\nt_end= 1.5\n", encoding="utf-8")
    assert read_config_file(str(cfg)) == {"alpha": "2.0", "t_end": "1.5"}


def test_config_file_rejects_garbage(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("alpha 2.0\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_config_file(str(cfg))


# ── csv emission ─────────────────────────────────────────────────────────────


def small_trajectory():
    t = np.array([0.0, 0.5, 1.0])
    states = np.array([[1.0, 2.0], [0.5, 1.0], [0.25, 0.5]])
    return Trajectory(times=t, states=states, residuals=np.array([3.0, 1.5, 0.75]),
                      inputs=np.array([-1.0, -0.5, -0.25]))


def test_emit_csv_layout(tmp_path):
    path = tmp_path / "out.csv"
    emit_csv(small_trajectory(), path, ["x1", "x2"])
    lines = read(path).splitlines()
    assert lines[0] == "t,x1,x2,residual,u"
    assert len(lines) == 4
    assert not any(line.endswith(",") for line in lines)
    assert lines[1] == "0,1,2,3,-1"


def test_emit_csv_round_trips_doubles(tmp_path):
    t = np.array([0.0, 1.0 / 3.0])
    value = np.array([[np.pi], [np.e * 1e-7]])
    traj = Trajectory(times=t, states=value, residuals=np.zeros(2), inputs=np.zeros(2))
    path = tmp_path / "rt.csv"
    emit_csv(traj, path, ["x1"])
    rows = [line.split(",") for line in read(path).splitlines()[1:]]
    assert float(rows[0][1]) == np.pi
    assert float(rows[1][0]) == 1.0 / 3.0
    assert float(rows[1][1]) == np.e * 1e-7


def test_emit_csv_estimation_layout(tmp_path):
    path = tmp_path / "est.csv"
    emit_csv(small_trajectory(), path, estimation=True)
    lines = read(path).splitlines()
    assert lines[0] == "t,err_1,err_2,err_norm"


def test_emit_csv_rejects_batched(tmp_path):
    t = np.array([0.0, 1.0])
    traj = Trajectory(times=t, states=np.zeros((2, 3, 2)),
                      residuals=np.zeros((2, 3)), inputs=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        emit_csv(traj, tmp_path / "x.csv", ["a", "b"])


def test_empty_trajectory_is_unconstructible():
    with pytest.raises(ValueError):
        Trajectory(times=np.array([]), states=np.zeros((0, 2)),
                   residuals=np.zeros(0), inputs=np.zeros(0))


# ── full runs ────────────────────────────────────────────────────────────────


def test_run_a1_writes_csv_and_report(tmp_path):
    spec = ExperimentSpec("A1", {"alpha": "1", "t_end": "2", "record_every": "10"})
    assert run(spec, out_dir=str(tmp_path)) == 0
    csv_text = read(tmp_path / "A1.csv")
    assert csv_text.splitlines()[0] == "t,x1,x2,residual,u"
    report = read(tmp_path / "A1_report.txt")
    assert "eigenvalue_1 = -1+0j" in report
    assert "eigenvalue_2 = -1+0j" in report
    assert "residual_decay_defect" in report


def test_run_is_deterministic(tmp_path):
    spec = ExperimentSpec("A2", {"t_end": "1", "record_every": "10"})
    assert run(spec, out_dir=str(tmp_path / "first")) == 0
    assert run(spec, out_dir=str(tmp_path / "second")) == 0
    assert read(tmp_path / "first" / "A2.csv") == read(tmp_path / "second" / "A2.csv")
    assert read(tmp_path / "first" / "A2_report.txt") == read(
        tmp_path / "second" / "A2_report.txt"
    )


def test_run_a3_reports_krasovskii(tmp_path):
    spec = ExperimentSpec("A3", {"t_end": "2", "x0": "0.5,0.5", "record_every": "10"})
    assert run(spec, out_dir=str(tmp_path)) == 0
    report = read(tmp_path / "A3_report.txt")
    assert "krasovskii_passed = True" in report


def test_run_b1_reports_connection(tmp_path):
    spec = ExperimentSpec("B1_LINEAR", {"t_end": "1", "record_every": "10"})
    assert run(spec, out_dir=str(tmp_path)) == 0
    report = read(tmp_path / "B1_LINEAR_report.txt")
    assert "connection = -0.5" in report


def test_run_b1_singular_fast_row_is_config_error(tmp_path):
    spec = ExperimentSpec("B1_LINEAR", {"a22": "0"})
    assert run(spec, out_dir=str(tmp_path)) == EXIT_CONFIG


def test_run_unknown_study_exit_code(tmp_path):
    assert run(ExperimentSpec("WARP_DRIVE", {}), out_dir=str(tmp_path)) == EXIT_CONFIG


def test_run_unknown_key_exit_code(tmp_path):
    assert run(ExperimentSpec("A1", {"alhpa": "1"}), out_dir=str(tmp_path)) == EXIT_CONFIG


def test_run_blow_up_exit_code(tmp_path):
    spec = ExperimentSpec(
        "B1_LINEAR",
        {"a11": "5", "a12": "0", "a21": "0", "a22": "5", "t_end": "10"},
    )
    assert run(spec, out_dir=str(tmp_path)) == EXIT_SIM


def test_run_excitation_pe(tmp_path):
    spec = ExperimentSpec("EXCITATION", {"signal": "PE", "t_end": "20"})
    assert run(spec, out_dir=str(tmp_path)) == 0
    report = read(tmp_path / "EXCITATION_report.txt")
    assert "verdict = PE" in report


def test_run_excitation_ie_with_threshold(tmp_path):
    spec = ExperimentSpec(
        "EXCITATION", {"signal": "IE", "t_end": "50", "threshold": "0.1"}
    )
    assert run(spec, out_dir=str(tmp_path)) == 0
    assert "verdict = IE_ONLY" in read(tmp_path / "EXCITATION_report.txt")


def test_run_estimation_study(tmp_path):
    spec = ExperimentSpec("EST_CGE", {"signal": "PE", "t_end": "2"})
    assert run(spec, out_dir=str(tmp_path)) == 0
    lines = read(tmp_path / "EST_CGE.csv").splitlines()
    assert lines[0] == "t,err_1,err_2,err_norm"
    report = read(tmp_path / "EST_CGE_report.txt")
    assert "method = CGE" in report
    assert "final_error_norm" in report


def test_run_buck_pni_short(tmp_path):
    spec = ExperimentSpec("BUCK_PNI", {"t_end": "0.02", "record_every": "20"})
    assert run(spec, out_dir=str(tmp_path)) == 0
    lines = read(tmp_path / "BUCK_PNI.csv").splitlines()
    assert lines[0] == "t,vc,zeta1,il,zeta2,residual,u"
    report = read(tmp_path / "BUCK_PNI_report.txt")
    assert "regulation_hurwitz = True" in report


def test_run_buck_dual_pi_short(tmp_path):
    spec = ExperimentSpec("BUCK_DUAL_PI", {"t_end": "0.02", "record_every": "20"})
    assert run(spec, out_dir=str(tmp_path)) == 0
    assert "hurwitz = True" in read(tmp_path / "BUCK_DUAL_PI_report.txt")


# ── command line entry ───────────────────────────────────────────────────────


def test_main_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "A1" in out and "EXCITATION" in out


def test_main_run_with_flags(tmp_path):
    code = main(
        ["run", "A1", "--set", "alpha=2", "--set", "t_end=1",
         "--set", "record_every=10", "--out", str(tmp_path)]
    )
    assert code == 0
    assert (tmp_path / "A1.csv").exists()


def test_main_flag_overrides_config_file(tmp_path):
    cfg = tmp_path / "a1.cfg"
    cfg.write_text("alpha = 2.0\nt_end = 1\nrecord_every = 10\n", encoding="utf-8")
    code = main(
        ["run", "A1", "--config", str(cfg), "--set", "alpha=1", "--out", str(tmp_path)]
    )
    assert code == 0
    assert "alpha = 1" in read(tmp_path / "A1_report.txt")


def test_main_sweep_writes_one_file_per_value(tmp_path):
    code = main(
        ["run", "A1", "--sweep", "alpha=0.5,1", "--set", "t_end=1",
         "--set", "record_every=10", "--out", str(tmp_path)]
    )
    assert code == 0
    assert (tmp_path / "A1__alpha=0.5.csv").exists()
    assert (tmp_path / "A1__alpha=1.csv").exists()


def test_main_bad_set_syntax():
    assert main(["run", "A1", "--set", "alpha"]) == EXIT_CONFIG


def test_main_bad_sweep_key(tmp_path):
    assert main(["run", "A1", "--sweep", "bogus=1,2", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PNI_OUT_DIR", str(tmp_path))
    spec = ExperimentSpec("A1", {"t_end": "1", "record_every": "10"})
    assert run(spec) == 0
    assert (tmp_path / "A1.csv").exists()
