import csv
import math

import numpy as np
import pytest

from em2d.cli import EXIT_CONFIG, EXIT_GEOMETRY, EXIT_NUMERICAL, exit_code, main
from em2d.errors import ConfigError, CouplingError, InteriorResonance, InvalidGeometry, SingularSystem
from em2d.mesh import write_mesh
from em2d.meshgen import build_rect_mesh
from em2d.scenario import PRESETS, format_config, parse_config, preset

SMALL = """
[scenario]
name = small
frequency = 300e6

[pde]
box = -1, -1, 1, 1
h = 0.1

[output]
rcs_angles = 36
oracle = mie

[sie.disk]
shape = circle
radii = 0.3
eps_r = 3
"""


def test_zero_frequency_is_a_config_error():
    with pytest.raises(ConfigError) as err:
        parse_config(SMALL.replace("300e6", "0"))
    assert err.value.key == "scenario.frequency"


@pytest.mark.parametrize("old,new,key", [
    ("h = 0.1", "h = 5", "pde.h"),
    ("radii = 0.3", "radii = 0.3, 0.4", "sie.disk.radii"),
    ("eps_r = 3", "eps_r = 3\ncolour = red", "sie.disk.colour"),
    ("radii = 0.3", "radii = 0.3\ncenter = 0.9, 0", "sie.disk.center"),
])
def test_bad_keys_are_named(old, new, key):
    with pytest.raises(ConfigError) as err:
        parse_config(SMALL.replace(old, new))
    assert err.value.key == key


def test_overlapping_domains_rejected():
    text = SMALL + "\n[sie.other]\nshape = circle\nradii = 0.2\ncenter = 0.3, 0\n"
    with pytest.raises(ConfigError, match="overlap"):
        parse_config(text)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip_through_config_text(name):
    s = preset(name)
    again = parse_config(format_config(s))
    assert format_config(again) == format_config(s)
    assert again.domains[0].inclusion(s.frequency).contour.m == s.domains[0].inclusion(s.frequency).contour.m


def test_preset_geometry():
    arr = preset("cable-array")
    assert len(arr.domains) == 4
    xs = [d.center[0] for d in arr.domains]
    np.testing.assert_allclose(np.diff(xs), 8e-3)
    inc = preset("coated-circle").domains[0].inclusion(300e6)
    assert inc.contour.area == pytest.approx(math.pi * 0.36, rel=2e-3)
    assert len(inc.holes) == 1
    with pytest.raises(ConfigError):
        preset("missing")


def test_exit_code_mapping():
    assert exit_code(ConfigError("x")) == EXIT_CONFIG
    assert exit_code(SingularSystem("x")) == EXIT_NUMERICAL
    assert exit_code(InteriorResonance("x")) == EXIT_NUMERICAL
    assert exit_code(InvalidGeometry("x")) == EXIT_GEOMETRY
    assert exit_code(CouplingError("x", 0)) == EXIT_GEOMETRY


def test_run_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "rcs_relative_error" in capsys.readouterr().out
    rows = list(csv.reader(open(tmp_path / "out" / "rcs.csv")))
    assert rows[0] == ["angle_deg", "sigma_dbm"] and len(rows) == 37
    metrics = dict(csv.reader(open(tmp_path / "out" / "metrics.csv")))
    assert float(metrics["rcs_relative_error"]) < 0.1


def test_config_errors_exit_with_two(tmp_path, capsys, monkeypatch):
    assert main(["run", str(tmp_path / "absent.ini")]) == EXIT_CONFIG
    cfg = tmp_path / "bad.ini"
    cfg.write_text(SMALL.replace("300e6", "-1"))
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "scenario.frequency" in capsys.readouterr().err
    cfg.write_text(SMALL)
    monkeypatch.setenv("EM2D_THREADS", "0")
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "EM2D_THREADS" in capsys.readouterr().err


def test_threads_variable_reaches_the_config(capsys, monkeypatch):
    monkeypatch.setenv("EM2D_THREADS", "3")
    assert main(["preset", "dielectric-circle", "--print-config"]) == 0
    assert "threads = 3" in capsys.readouterr().out


def test_sweep_rejects_bad_ladder(capsys):
    assert main(["sweep", "dielectric-circle", "--elements", "2000,1000"]) == EXIT_CONFIG
    assert "--elements" in capsys.readouterr().err


def test_mesh_info(tmp_path, capsys):
    m = build_rect_mesh((0, 0, 2, 1), 0.5)
    path = tmp_path / "m.txt"
    with open(path, "w") as f:
        write_mesh(m, f)
    assert main(["mesh-info", str(path)]) == 0
    out = capsys.readouterr().out
    assert f"triangles  {m.n_triangles}" in out and "area       2" in out
    path.write_text("garbage\n")
    assert main(["mesh-info", str(path)]) == EXIT_CONFIG
    assert "parse error" in capsys.readouterr().err
