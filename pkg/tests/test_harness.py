import csv
import json

import numpy as np
import pytest

from ficstack import harness_cli
from ficstack.harness_cli import (ExperimentConfig, RunAborted, experiment_preset_path,
                                  experiment_presets, load_config, main, random_pushes, read_log,
                                  report_metrics, run, set_path)


def preset_dict(name, **overrides):
    with open(experiment_preset_path(name)) as f:
        d = json.load(f)
    d.update(overrides)
    return d


def synthetic_log(err_fn, n=2001, T=2.0):
    t = np.linspace(0, T, n)
    e = np.array([err_fn(x) for x in t])
    log = {"t": t, "tau_cmd0": np.zeros(n), "q0": np.zeros(n)}
    for k, a in enumerate("xyz"):
        log[f"ee_ref_{a}"] = e[:, k]
        log[f"ee_{a}"] = np.zeros(n)
    return log


def test_report_constant_and_zero_error():
    r = report_metrics(synthetic_log(lambda t: [0.003, -0.002, 0.0]))
    assert r.rmse == pytest.approx([0.003, 0.002, 0.0], abs=1e-15)
    assert r.max_error == pytest.approx([0.003, 0.002, 0.0])
    r = report_metrics(synthetic_log(lambda t: [0.0, 0.0, 0.0]))
    assert r.rmse == [0.0, 0.0, 0.0]


def test_report_sinusoid_rmse():
    A = 0.004
    # whole number of periods, endpoint excluded so the mean is exact
    log = synthetic_log(lambda t: [A * np.sin(2 * np.pi * t), 0, 0], n=4000, T=2.0 - 2.0 / 4000)
    r = report_metrics(log)
    assert r.rmse[0] == pytest.approx(A / np.sqrt(2), abs=1e-9)


def test_report_window():
    log = synthetic_log(lambda t: [1.0 if t < 1.0 else 0.0, 0, 0])
    r = report_metrics(log, window_start=1.0)
    assert r.rmse[0] == 0.0 and r.window[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        report_metrics(log, window_start=5.0)


def test_config_validation():
    d = preset_dict("hold_start")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**d, "schema": 7})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**d, "bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**d, "control_rate": 0})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**d, "gravity_mode": "maybe"})
    with pytest.raises(KeyError):
        ExperimentConfig.from_dict(set_path(d, "stack.0.pos_params", "sim/nothing"))


def test_every_preset_loads():
    names = experiment_presets()
    assert {"sim_fig8_noint", "sim_fig8_obstacle", "robot_line_elbow_push", "singular_stretch"} <= set(names)
    for name in names:
        cfg = load_config(name)
        cfg.build_stack()
        cfg.build_model()
        assert cfg.to_dict()["schema"] == 1


def test_set_path():
    d = {"stack": [{"pos_params": {"f_max": 1.0}}]}
    e = set_path(d, "stack.0.pos_params.f_max", 2.0)
    assert e["stack"][0]["pos_params"]["f_max"] == 2.0 and d["stack"][0]["pos_params"]["f_max"] == 1.0
    with pytest.raises(KeyError):
        set_path(d, "stack.0.pos_params.fmax", 2.0)


def test_random_pushes_are_seeded():
    a = random_pushes(3, "elbow", 4, 10.0, 0.2, 1.0, 5.0)
    b = random_pushes(3, "elbow", 4, 10.0, 0.2, 1.0, 5.0)
    c = random_pushes(4, "elbow", 4, 10.0, 0.2, 1.0, 5.0)
    assert [p.to_dict() for p in a] == [p.to_dict() for p in b]
    assert [p.to_dict() for p in a] != [p.to_dict() for p in c]
    for p in a:
        assert 1.0 <= p.t_start and p.t_end <= 5.0 + 1e-12
        assert np.linalg.norm(p.wrench[:3]) == pytest.approx(10.0)


def test_hold_run_is_a_fixed_point(tmp_path):
    cfg = load_config("hold_start")
    report = run(cfg, tmp_path / "hold", plots=False)
    assert max(report.rmse) <= 1e-6
    assert report.window[0] == pytest.approx(0.5)
    rows = read_log(report.log_path)
    assert len(rows["t"]) == report.ticks
    saved = json.loads((tmp_path / "hold" / "report.json").read_text())
    assert saved["rmse"] == report.rmse


def test_log_columns(tmp_path):
    cfg = ExperimentConfig.from_dict(preset_dict("sim_fig8_obstacle", duration=0.05))
    report = run(cfg, tmp_path, plots=False)
    with open(report.log_path) as f:
        header = next(csv.reader(f))
    n = 7
    expected = ["t"] + [f"{k}{i}" for k in ("q", "qd", "tau_cmd", "tau_ext") for i in range(n)]
    assert header[:len(expected)] == expected
    assert header[len(expected)] == "contact_force_0_ee"
    assert "ee_err_x" in header and "elbow_err_z" in header


def test_log_metrics_match_in_memory_report(tmp_path):
    cfg = ExperimentConfig.from_dict(preset_dict("robot_line_noint", duration=0.5, eval_start=0.1))
    report = run(cfg, tmp_path, plots=False)
    again = report_metrics(read_log(report.log_path), 0.1)
    assert again.rmse == pytest.approx(report.rmse, rel=1e-12)
    assert again.torque_peak == pytest.approx(report.torque_peak, rel=1e-12)


def test_nan_aborts_with_tick(monkeypatch, tmp_path):
    real = harness_cli.stack_step
    calls = {"n": 0}

    def poisoned(*a, **k):
        out = real(*a, **k)
        calls["n"] += 1
        if calls["n"] == 6:
            out.tau[2] = np.nan
        return out

    monkeypatch.setattr(harness_cli, "stack_step", poisoned)
    cfg = ExperimentConfig.from_dict(preset_dict("hold_start", duration=0.05))
    with pytest.raises(RunAborted) as info:
        run(cfg, None)
    assert info.value.tick == 5 and info.value.quantity == "tau_cmd"


def test_figures_are_written(tmp_path):
    cfg = ExperimentConfig.from_dict(preset_dict("robot_line_elbow_push", duration=0.2))
    run(cfg, tmp_path, plots=True)
    for name in ("tracking.png", "errors.png", "torques.png", "log.csv", "report.json", "config.json"):
        assert (tmp_path / name).stat().st_size > 0


def test_cli_presets_list(capsys):
    assert main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("sim/elbow", "sim/ee_pos", "sim/ee_rot", "robot/elbow", "robot/ee_pos", "sim_fig8_noint"):
        assert name in out


def test_cli_run_missing_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err
    assert main(["run", "--config", "no_such_preset"]) != 0


def test_cli_run_uses_output_env(tmp_out, tmp_path, capsys):
    path = tmp_path / "hold.json"
    path.write_text(json.dumps(preset_dict("hold_start", duration=0.05, eval_start=0.0)))
    assert main(["run", "--config", str(path), "--no-plots"]) == 0
    assert (tmp_out / "runs" / "hold_start" / "log.csv").exists()


def test_cli_profile(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["profile", "--preset", "sim/ee_pos", "--emit", "force", "--out", str(out),
                 "--figure", str(tmp_path / "p.png")]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["x_err", "force"]
    vals = np.array(rows[1:], dtype=float)
    assert vals[:, 1].max() == pytest.approx(150.0) and vals[:, 1].min() == pytest.approx(-150.0)
    assert (tmp_path / "p.png").exists()
    assert main(["profile", "--preset", "sim/ee_pos", "--emit", "energy", "--points", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "x_err,energy" and len(lines) == 6
    assert main(["profile", "--preset", "sim/nothing"]) != 0


def test_cli_phase_portrait(tmp_path):
    out = tmp_path / "pp.csv"
    assert main(["phase-portrait", "--preset", "robot/ee_pos", "--duration", "0.5", "--dt", "1e-4",
                 "--out", str(out), "--figure", str(tmp_path / "pp.png")]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["traj_id", "t", "x_err", "x_dot"]
    data = np.array(rows[1:], dtype=float)
    assert set(data[:, 0].astype(int)) == set(range(8))
    last = {int(i): data[data[:, 0] == i][-1] for i in range(8)}
    for row in last.values():
        assert abs(row[2]) < 1e-4 and abs(row[3]) < 1e-4


def test_cli_sweep_halving_fmax_lowers_torque_peak(tmp_path, capsys):
    path = tmp_path / "hold.json"
    d = preset_dict("hold_start", gravity_mode="on", duration=0.3, eval_start=0.0)
    path.write_text(json.dumps(d))
    assert main(["sweep", "--config", str(path), "--param", "stack.0.pos_params.f_max",
                 "--values", "150,75,37.5", "--out", str(tmp_path / "sw")]) == 0
    rows = list(csv.reader((tmp_path / "sw" / "summary.csv").open()))
    peaks = [float(r[-1]) for r in rows[1:]]
    assert len(peaks) == 3
    assert all(b <= a + 1e-12 for a, b in zip(peaks, peaks[1:]))
