import csv
import json

import numpy as np
import pytest

from dgpipe.cli import ConfigError, RunConfig, format_table, main, parse_config
from dgpipe.spectral import SpectrumReport


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_run_config_round_trip():
    cfg = RunConfig(command="bench", n="10,20", precond="lsc", tol_dg=1e-6, repeats=2)
    assert cfg.n == (10, 20)
    back = RunConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.solver_config().dg.tol == 1e-6
    assert back.solver_config().precond == "lsc"


@pytest.mark.parametrize("kwargs", [
    {"command": "plot"},
    {"n": "0"},
    {"geometry": "torus"},
    {"geometry": "custom:/nonexistent/table.csv"},
    {"nz": 2},
    {"precond": "exact"},
    {"schur_constant": "3d"},
    {"mu": -1.0},
    {"tol_outer": 2.0},
    {"steps": 0},
    {"initial": "turbulent"},
    {"command": "spectrum", "matrix": "Q"},
    {"command": "spectrum", "ny": 4},
    {"command": "spectrum", "geometry": "pipe3d"},
])
def test_invalid_configurations(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_unknown_config_key():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"command": "solve", "colour": "blue"})


def test_3d_settings_accepted():
    cfg = RunConfig(geometry="pipe3d", nz=2)
    assert cfg.resolved_constant() == "3d"
    assert RunConfig(geometry="pipe").resolved_constant() == "2d"


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        parse_config(["spectrum", "--matrix", "Q", "--n", "8"])
    assert info.value.code == 2
    assert "unknown matrix" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        parse_config(["solve", "--precond", "magic"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        parse_config(["solve", "--nz", "2"])
    assert info.value.code == 2


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"command": "solve", "n": [10, 20], "precond": "lsc", "steps": 4}))
    cfg = parse_config(["solve", "--config", str(path), "--steps", "1"])
    assert cfg.n == (10, 20) and cfg.precond == "lsc" and cfg.steps == 1


def test_spectrum_command(tmp_path, capsys):
    assert run(tmp_path, "spectrum", "--matrix", "L,schur", "--n", "8,16", "--samples", "200") == 0
    out = capsys.readouterr().out
    assert "schur" in out and "n=16" in out
    rep = SpectrumReport.from_files(tmp_path / "spectrum_L_n8.csv", tmp_path / "spectrum_L_n8.json")
    assert rep.values.size == 36
    summary = json.loads((tmp_path / "spectrum_summary.json").read_text())
    schur = [r for r in summary["results"] if r["name"] == "schur"]
    assert all("power_law" in r for r in schur)
    assert json.loads((tmp_path / "run_config.json").read_text())["command"] == "spectrum"


def test_spectrum_dense_threshold_exit_code(tmp_path, capsys):
    assert run(tmp_path, "spectrum", "--matrix", "A", "--n", "40", "--threshold", "100") == 2
    assert "dense threshold" in capsys.readouterr().err


def test_solve_command_table(tmp_path, capsys):
    assert run(tmp_path, "solve", "--n", "10,20", "--steps", "1", "--dump-matrices") == 0
    table = (tmp_path / "solve_table.txt").read_text()
    assert "K_A" in table and "K_S" in table and "K_DG" not in table
    assert table in capsys.readouterr().out
    report = json.loads((tmp_path / "solve_report.json").read_text())
    assert [r["n"] for r in report["reports"]] == [10, 20]
    assert (tmp_path / "matrices_n10" / "A_scaled.mtx").is_file()


def test_lsc_table_has_dg_column(tmp_path):
    assert run(tmp_path, "solve", "--n", "10", "--steps", "1", "--precond", "lsc") == 0
    header = (tmp_path / "solve_table.txt").read_text().splitlines()[1]
    assert "K_DG" in header


def test_massless_circulant_stops_converging(tmp_path):
    assert run(tmp_path, "solve", "--n", "80", "--steps", "1", "--precond", "circulant-s") == 0
    assert "no conv." in (tmp_path / "solve_table.txt").read_text()


def test_simulate_command(tmp_path):
    assert run(tmp_path, "simulate", "--n", "10", "--steps", "2", "--initial", "poiseuille") == 0
    with (tmp_path / "state_n10_step2.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert sum(r["field"] == "u" for r in rows) == 44
    assert sum(r["field"] == "p" for r in rows) == 20
    values = np.array([float(r["value"]) for r in rows])
    assert np.isfinite(values).all()
    report = json.loads((tmp_path / "simulate_report.json").read_text())
    assert report["results"][0]["velocity_error"] < 1e-6
    assert "Picard" in (tmp_path / "simulate_table.txt").read_text()


def test_bench_command(tmp_path, capsys):
    assert run(tmp_path, "bench", "--n", "10,20", "--repeats", "2") == 0
    report = json.loads((tmp_path / "bench_report.json").read_text())
    assert len(report["rows"]) == 2 and report["growth"] == []
    assert all(r["median_time"] > 0 for r in report["rows"])
    assert "median" in capsys.readouterr().out


def test_format_table_layout():
    rows = [{"n": 10, "K_A": "2", "K_S": "5 -- 7", "K_DG": "4 -- 9", "time": 0.5, "picard_text": "2 -- 3"}]
    text = format_table(rows, "lsc", picard=True)
    lines = text.splitlines()
    assert lines[0] == "preconditioner: lsc"
    assert [c.strip() for c in lines[1].split("|")] == ["n", "Picard", "K_A", "K_S", "K_DG", "time (s)"]
    assert "4 -- 9" in lines[3] and "2 -- 3" in lines[3]
