import csv
import json

import pytest

from aggtrack.cli import main

SCALAR = {
    "scenario": "quadratic", "horizon": 30, "alpha": 0.25, "delta": 0.4,
    "problem": {"Q": [[[1.0]]], "c": [[0.0]], "kappa": [1.0], "b": [[0.0]], "W": [[[1.0]]]},
    "x0": [[1.0]],
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    return str(path)


def test_malformed_json_reports_location(tmp_path, capsys):
    path = write(tmp_path, '{"scenario": "quadratic",\n  "horizon": }')
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "line 2" in err and "column" in err


def test_unknown_scenario_is_config_error(tmp_path):
    assert main(["certify", "--config", write(tmp_path, {"scenario": "chess"})]) == 1


def test_certify_scalar_reports_closed_form(tmp_path, capsys):
    assert main(["certify", "--config", write(tmp_path, SCALAR), "--out", str(tmp_path / "c")]) == 0
    rep = json.loads((tmp_path / "c" / "certify.json").read_text())
    assert rep["lambda_delta"] == pytest.approx(1 - 2 * 0.25 * 0.4)
    assert rep["Q"] == 0.0 and rep["certified"]
    assert "lambda_delta" in capsys.readouterr().out


def test_certify_stiff_delta_exits_3(tmp_path, capsys):
    cfg = {"scenario": "quadratic", "constants": {"mu": 0.1, "L1": 1.0, "L2": 1.0, "L3": 1.0},
           "rho": 0.9, "n_agents": 10, "alpha": 1.0, "delta": 0.999}
    assert main(["certify", "--config", write(tmp_path, cfg), "--quiet"]) == 3
    assert "not certified" in capsys.readouterr().err


def test_run_writes_outputs_and_replays(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", write(tmp_path, SCALAR), "--out", str(out), "--quiet"]) == 0
    for name in ("trace.csv", "metrics.json", "manifest.json"):
        assert (out / name).exists()
    with open(out / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 31 and float(rows[-1]["err_x"]) == pytest.approx(0.8**30, rel=1e-9)
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_status"] == 0 and set(man["outputs"]) == {"trace.csv", "metrics.json"}
    again = tmp_path / "again"
    assert main(["replay", "--manifest", str(out / "manifest.json"), "--out", str(again), "--quiet"]) == 0
    assert (again / "trace.csv").read_bytes() == (out / "trace.csv").read_bytes()


def test_tracking_drift_beyond_tolerance_exits_2(tmp_path, capsys):
    cfg = {"scenario": "quadratic", "horizon": 50, "delta": 0.5,
           "problem": {"random": {"n_agents": 4, "dim": 3, "seed": 1}},
           "tolerances": {"tracking_base": 0.0, "tracking_drift": 0.0}}
    out = tmp_path / "bad"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out), "--quiet"]) == 2
    rep = json.loads((out / "violation.json").read_text())
    assert rep["invariant"].startswith("tracking") and rep["round"] >= 1
    assert f"at round {rep['round']}" in capsys.readouterr().err


def test_surveillance_static_monte_carlo_summary(tmp_path):
    cfg = {"scenario": "surveillance", "params": {"n_agents": 5, "horizon": 40, "edge_prob": 0.6}}
    out = tmp_path / "mc"
    code = main(["run", "--config", write(tmp_path, cfg), "--out", str(out), "--trials", "3",
                 "--mode", "static", "--quiet"])
    assert code == 0
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 41 and float(rows[-1]["mean"]) < float(rows[0]["mean"])
    assert json.loads((out / "metrics.json").read_text())["trials"] == 3


def test_basketball_run_writes_positions(tmp_path):
    cfg = {"scenario": "basketball", "params": {"horizon": 50}}
    out = tmp_path / "bb"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    header = (out / "positions.csv").read_text().splitlines()[0]
    assert header == "t,kind,index,x,y"
    assert json.loads((out / "metrics.json").read_text())["min_horizontal_margin"] >= 0


def test_sweep_grid(tmp_path):
    cfg = dict(SCALAR, sweep={"alpha": [0.25, 0.5], "delta": [0.2, 0.4]})
    out = tmp_path / "sw"
    assert main(["sweep", "--config", write(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert float(rows[1]["lambda"]) == pytest.approx(1 - 2 * 0.25 * 0.4)
