import csv
import json
import subprocess
import sys

import pytest

from mbspec.cli import (
    ConfigError,
    apply_override,
    default_config,
    load_config,
    main,
    to_plan,
    to_toml,
    tomllib,
)
from mbspec.sweep import KINDS, plan_points


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run_main(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("kind", KINDS)
def test_print_defaults_round_trip(kind, capsys, tmp_path):
    code, out, _ = run_main(capsys, ["print-defaults", kind])
    assert code == 0
    parsed = tomllib.loads(out)
    assert to_plan(parsed) == to_plan(default_config(kind))
    assert to_plan(load_config(write(tmp_path, out))) == to_plan({"kind": kind})


def test_default_grids():
    loc = to_plan({"kind": "localization"})
    assert len(loc.grid) == 21 and loc.grid[0] == 0.0 and loc.grid[-1] == 6.0
    assert len(loc.ensemble) == 4 and loc.sector == 2
    ml = to_plan({"kind": "missing-levels"})
    assert ml.base.sites == 18 and len(ml.grid) == 20 and len(ml.ensemble) == 8
    bf = to_plan({"kind": "butterfly"})
    assert len(bf.grid) == 100 and bf.sector == 1 and bf.base.interaction == 0.0


def test_unknown_key_rejected(capsys, tmp_path):
    path = write(tmp_path, 'kind = "localization"\n[sweep]\ndelta_grid = [50.0]\nbogus = 1\n')
    code, out, err = run_main(capsys, ["run", path, "--dry-run"])
    assert code == 2 and out == ""
    payload = json.loads(err)
    assert payload["error"] == "config" and "bogus" in payload["message"]


@pytest.mark.parametrize("text", [
    'kind = "nope"\n',
    'kind = "localization"\ncolour = 3\n',
    'kind = "localization"\n[hamiltonian]\ndelta = 5.0\n',
    'kind = "butterfly"\n[sweep]\ndelta_grid = [1.0]\n',
    'kind = "butterfly"\n[sweep]\nb_points = 3\nb_grid = [0.1]\n',
    'kind = "localization"\n[sweep]\ndelta_grid = [-1.0]\n',
    'kind = "butterfly"\n[hamiltonian]\ndelta = -1.0\n',
    'kind = "localization"\n[sweep]\ndelta_grid = [2.0, 1.0]\n',
    'kind = "localization"\n[detection]\nthreshold = "high"\n',
    'kind = "localization"\n[sweep\n',
    'kind = "localization"\n[detection]\nmin_separation = 0.5\n',
    'kind = "localization"\n[detection]\nwindow = "kaiser"\n',
    'kind = "localization"\n[options]\nmode = "fast"\n',
    'name = "missing kind"\n',
])
def test_config_errors(text, capsys, tmp_path):
    code, _, err = run_main(capsys, ["run", write(tmp_path, text), "--dry-run"])
    assert code == 2
    assert json.loads(err)["error"] == "config"


def test_missing_file_and_double_config(capsys, tmp_path):
    assert run_main(capsys, ["run", str(tmp_path / "absent.toml")])[0] == 2
    path = write(tmp_path, 'kind = "butterfly"\n')
    assert run_main(capsys, ["run", path, "--config", path])[0] == 2
    assert run_main(capsys, ["run", path, "--threads", "0"])[0] == 2


def test_overrides():
    cfg = default_config("localization")
    cfg = apply_override(cfg, "delta_grid=[50]")
    cfg = apply_override(cfg, "detection.threshold=0.02")
    cfg = apply_override(cfg, "name=short")
    assert cfg["sweep"]["delta_grid"] == [50] and cfg["detection"]["threshold"] == 0.02
    assert cfg["name"] == "short"
    with pytest.raises(ConfigError):
        apply_override(cfg, "nokey")
    with pytest.raises(ConfigError):
        apply_override(cfg, "phases_typo=[0]")
    with pytest.raises(ConfigError):
        apply_override(cfg, "nosection.x=1")


def test_dry_run_single_point(capsys, tmp_path):
    path = write(tmp_path, 'kind = "localization"\n')
    out_dir = tmp_path / "out"
    code, out, _ = run_main(capsys, ["run", path, "--set", "delta_grid=[50]", "--set", "b_values=[0.5]",
                                     "--out", str(out_dir), "--dry-run"])
    assert code == 0
    expanded = json.loads(out)
    assert len(expanded["points"]) == 1
    assert expanded["points"][0]["delta_over_j"] == 1.0
    assert not out_dir.exists()


def test_seed_flag(tmp_path):
    path = write(tmp_path, 'kind = "localization"\n[options]\npotential = "random"\n')
    a = plan_points(to_plan(load_config(path, seed=1)))[-1].spec.onsite()
    b = plan_points(to_plan(load_config(path, seed=2)))[-1].spec.onsite()
    assert not (a == b).all()


def test_run_butterfly_artifacts(capsys, tmp_path):
    path = write(tmp_path, 'kind = "butterfly"\n')
    code, out, _ = run_main(capsys, ["run", path, "--out", str(tmp_path / "res"), "--threads", "2"])
    assert code == 0
    status = json.loads(out)
    assert status["status"] == "ok" and status["points"] == 100 and status["failures"] == []
    root = tmp_path / "res" / "butterfly"
    with open(root / "tables" / "butterfly.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 101 and rows[0][:3] == ["b", "peaks", "E1"]
    assert all(r[1] == "9" for r in rows[1:])
    svg = root / "figures" / "butterfly.svg"
    assert svg.read_text().lstrip().startswith("<?xml")
    first = svg.read_bytes()
    code, out, _ = run_main(capsys, ["run", path, "--out", str(tmp_path / "res")])
    assert code == 0 and json.loads(out)["computed"] == 0
    assert svg.read_bytes() == first


def test_verify_reports(capsys, tmp_path):
    path = write(tmp_path, 'kind = "spectroscopy"\n')
    code, out, _ = run_main(capsys, ["verify", path])
    assert code == 0
    rep = json.loads(out)
    assert rep["max_abs_deviation"] < 0.5 and rep["warning_count"] == 0
    assert rep["points"][0]["peaks"] == 9 and len(rep["points"][0]["oracle"]) == 9


def test_verify_damped_warns(capsys, tmp_path):
    path = write(tmp_path, 'kind = "spectroscopy"\n')
    code, out, _ = run_main(capsys, ["verify", path, "--set", "sector=2", "--set", "damping=50"])
    assert code == 0
    rep = json.loads(out)
    merged = [w for w in rep["points"][0]["warnings"] if w["kind"] == "merged_peaks"]
    assert merged and all(len(w["levels"]) >= 2 for w in merged)
    assert {"kind": "peak_count", "detected": 36, "expected": 45} in rep["points"][0]["warnings"]


def test_verify_rejects_other_kinds(capsys, tmp_path):
    path = write(tmp_path, 'kind = "correlations"\n')
    assert run_main(capsys, ["verify", path])[0] == 2


def test_sector_zero(capsys, tmp_path):
    path = write(tmp_path, 'kind = "spectroscopy"\n[sweep]\nsector = 0\n')
    code, out, _ = run_main(capsys, ["verify", path])
    assert code == 0
    rep = json.loads(out)
    assert rep["points"][0]["oracle"] == [0.0] and rep["max_abs_deviation"] == 0.0


def test_runtime_failure_exit(capsys, tmp_path):
    path = write(tmp_path, 'kind = "spectroscopy"\n[time]\nduration = 0.5\n')
    code, out, _ = run_main(capsys, ["run", path, "--out", str(tmp_path / "r")])
    assert code == 3
    assert json.loads(out)["status"] == "partial"


def test_sector_too_large_is_runtime(capsys, tmp_path):
    path = write(tmp_path, 'kind = "spectroscopy"\n[hamiltonian]\nsites = 100\n[sweep]\nsector = 2\n')
    code, out, _ = run_main(capsys, ["run", path, "--out", str(tmp_path / "r")])
    assert code == 3
    assert "SectorTooLarge" in json.dumps(json.loads(out)["failures"])


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mbspec.cli", "print-defaults", "butterfly"],
                          capture_output=True, text=True, check=True)
    assert tomllib.loads(proc.stdout)["kind"] == "butterfly"
    assert to_toml(default_config("butterfly")) == proc.stdout
