import json

import pytest

from willmore_flow.cli import main
from willmore_flow.io import REPORT_KEYS, SERIES_COLUMNS, read_obj, read_series

SPHERE_EQ = {"surface": {"type": "sphere"}, "grid": {"resolution": 32},
             "initial": {"type": "constant", "amplitude": 0.1}, "flow": {"t_end": 0.01}}
TORUS_SHORT = {"surface": {"type": "torus", "R": 2.0, "r": 1.0}, "grid": {"resolution": 32},
               "initial": {"type": "harmonic", "amplitude": 0.05, "l": 0, "m": 1},
               "flow": {"dt0": 2e-4, "t_end": 1e-3, "atol": 1e-6, "rtol": 1e-4}}


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", write_config(tmp_path, SPHERE_EQ), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert tuple(report) == REPORT_KEYS
    assert report["terminal"] == "equilibrium"
    assert report["config_echo"]["grid"]["resolution"] == 32
    assert (out / "series.csv").read_text().splitlines()[0] == ",".join(SERIES_COLUMNS)
    verts, _ = read_obj(out / "mesh_0.obj")
    assert len(verts) == 2 * 32 * 32


def test_run_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, TORUS_SHORT)
    for d in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "series.csv").read_bytes()
    assert a == (tmp_path / "b" / "series.csv").read_bytes()
    s = read_series(tmp_path / "a" / "series.csv")
    assert s["t"][-1] == pytest.approx(1e-3)
    assert all(s["W"][1:] <= s["W"][:-1] * (1 + 1e-8))


def test_output_directory_from_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    data = dict(SPHERE_EQ, output={"directory": "results", "formats": ["json"]})
    assert main(["run", "--config", write_config(tmp_path, data)]) == 0
    assert sorted(p.name for p in (tmp_path / "results").iterdir()) == ["report.json"]


def test_tube_exit_code(tmp_path):
    data = {"surface": {"type": "torus", "R": 3.0, "r": 1.0}, "grid": {"resolution": 32},
            "initial": {"type": "constant", "amplitude": -0.495},
            "flow": {"dt0": 1e-3, "t_end": 2.0, "max_steps": 400}, "output": {"formats": ["json"]}}
    assert main(["run", "--config", write_config(tmp_path, data), "--out", str(tmp_path / "o")]) == 2
    assert json.loads((tmp_path / "o" / "report.json").read_text())["terminal"] == "tubular_exit"


def test_solver_exit_code(tmp_path):
    data = dict(TORUS_SHORT, flow={"dt0": 1e-4, "t_end": 1.0, "max_steps": 1, "adaptive": False},
                output={"formats": ["csv"]})
    assert main(["run", "--config", write_config(tmp_path, data), "--out", str(tmp_path / "o")]) == 3


def test_config_errors_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["run", "--config", str(p)]) == 1
    bad = {"surface": {"type": "torus", "R": 2.0, "r": 1.0}, "initial": {"type": "constant", "amplitude": 0.9}}
    assert main(["energy", "--config", write_config(tmp_path, bad)]) == 1
    assert "initial.amplitude" in capsys.readouterr().err


def test_unwritable_output_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", write_config(tmp_path, SPHERE_EQ), "--out", str(blocker / "sub")]) == 4


def test_thread_variable_validated(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, SPHERE_EQ)
    monkeypatch.setenv("WILLMORE_THREADS", "zero")
    assert main(["energy", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    monkeypatch.setenv("WILLMORE_THREADS", "1")
    assert main(["energy", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_energy_report(tmp_path):
    data = {"surface": {"type": "torus", "R": 2.0, "r": 1.0}, "grid": {"resolution": 32}}
    assert main(["energy", "--config", write_config(tmp_path, data), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep) == {"W", "area", "gb_defect", "el_residual_sup", "rho_sup", "config_echo"}
    assert rep["W"] == pytest.approx(4 * 3.141592653589793**2 / 3**0.5, rel=1e-9)


def test_probe_requires_section(tmp_path):
    assert main(["probe", "--config", write_config(tmp_path, SPHERE_EQ), "--out", str(tmp_path)]) == 1


def test_probe_kink_fixture(tmp_path):
    data = {"surface": {"type": "sphere"}, "grid": {"resolution": 48}, "probe": {"fixture": "kink"}}
    assert main(["probe", "--config", write_config(tmp_path, data), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "probe.json").read_text())
    assert rep["fixture"] == "kink" and rep["decays_through_degree"] is False
    assert len(rep["ratios"]) == 6
