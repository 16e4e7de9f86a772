import json
import math
from pathlib import Path

import numpy as np
import pytest

from microtrap.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_RUNTIME, main, parse_config
from microtrap.detection import DetectionGeometry, bin_arrivals, write_tof
from microtrap.protocols import ConfigurationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_zeros_worked_example(tmp_path, capsys):
    rc = main(["zeros", "--config", str(CONFIGS / "zeros_worked_example.ini"), "--out", str(tmp_path)])
    assert rc == EXIT_OK
    lines = (tmp_path / "zeros.csv").read_text().splitlines()
    assert lines[0].startswith("# microtrap zeros config_sha256=")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    assert len(rows) == 4
    assert np.allclose(rows[:, 2], 100e-6 * 4 / math.pi * math.log(10), rtol=0.02)


def test_fields_map(tmp_path):
    assert main(["fields", "--config", str(CONFIGS / "fields.ini"), "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "field_map.csv").read_text().splitlines()
    assert len(lines) == 2 + 9 * 15


def test_storage_sweep_writes_tof_files_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, """
[source]
e_load = 2e6
n_molecules = 40
[loss]
background_rate = 5.0
[protocol]
t_unload = 0.1
sweep = 0.01, 0.05, 0.1
[integration]
dt = 5e-6
""")
    assert main(["storage", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3"]) == EXIT_OK
    out = tmp_path / "o"
    assert sorted(p.name for p in out.glob("tof_hold_*.csv")) == [
        "tof_hold_0p01.csv", "tof_hold_0p05.csv", "tof_hold_0p1.csv"]
    report = json.loads((out / "report.json").read_text())
    assert report["provenance"]["seed"] == 3 and len(report["runs"]) == 3
    for r in report["runs"]:
        assert sum(r["counts"].values()) == r["n_initial"]
    assert "status" in report["lifetime_fit"]


def test_runs_are_reproducible_and_worker_independent(tmp_path):
    cfg = _write(tmp_path, """
[source]
n_molecules = 30
[protocol]
t_unload = 0.1
sweep = 0.02
[integration]
dt = 5e-6
""")
    main(["storage", "--config", cfg, "--out", str(tmp_path / "a"), "--workers", "1"])
    main(["storage", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "3"])
    name = "tof_hold_0p02.csv"
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_adiabatic_prints_optimum(tmp_path, capsys):
    cfg = _write(tmp_path, """
[source]
e_load = 1e6
n_molecules = 20
[protocol]
t_total_constraint = 0.04
t_unload = 0
sweep = 0.002, 0.02
[integration]
dt = 5e-6
""")
    assert main(["adiabatic", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "F_opt(d=3) = 1.5874" in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["runs"][0]["cooling_factor"] == 1.0


def test_analyze_tof(tmp_path, capsys):
    sig = bin_arrivals(np.full(100, 0.0555), DetectionGeometry(guide_length=0.3), 0.0)
    path = tmp_path / "tof.csv"
    write_tof(path, sig)
    assert main(["analyze-tof", str(path), "--out", str(tmp_path)]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert 0.3 / 0.06 < res["mean_velocity"] < 0.3 / 0.05
    assert res["temperature"] > 0


def test_fit_lifetime(tmp_path, capsys):
    t = np.linspace(0.5, 30, 8)
    path = tmp_path / "decay.csv"
    path.write_text("t_hold,signal\n" + "".join(f"{a},{1000 * math.exp(-a / 12.2)}\n" for a in t))
    assert main(["fit-lifetime", str(path), "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["tau"] == pytest.approx(12.2, rel=1e-8)


@pytest.mark.parametrize("text", [
    "[nonsense]\na = 1\n",
    "[source]\ncolour = red\n",
    "[source]\nn_molecules = many\n",
    "[source]\ne_load = 9e6\n",
    "[protocol]\nt_hold = 1\n",  # no sweep
    "[electrodes]\ne_perimeter = 7e6\n[protocol]\nsweep = 1\n",
    "[species]\nstates = 1,1,1:1.0\n[protocol]\nsweep = 1\n",
])
def test_configuration_errors_exit_2(tmp_path, text, capsys):
    cfg = _write(tmp_path, text)
    assert main(["storage", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_missing_file_is_io_error(tmp_path):
    assert main(["storage", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == EXIT_IO


def test_unusable_data_exit_3(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("# nothing\n")
    assert main(["analyze-tof", str(empty), "--out", str(tmp_path)]) == EXIT_RUNTIME
    short = tmp_path / "short.csv"
    short.write_text("1,10\n2,5\n")
    assert main(["fit-lifetime", str(short), "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_parse_config_types():
    cfg = parse_config("[field]\nsoft_perimeter = off\nperimeter_decay = auto\n[integration]\nseed = 4\n")
    assert cfg.get("field", "soft_perimeter") is False
    assert cfg.get("field", "perimeter_decay") is None
    assert cfg.get("integration", "seed") == 4
    with pytest.raises(ConfigurationError):
        parse_config("[field]\nsoft_perimeter = maybe\n")
