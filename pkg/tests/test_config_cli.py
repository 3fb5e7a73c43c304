import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import CONFIGS, R
from defmesh.cli import main
from defmesh.config import ConfigError, load_config, parse_config, parse_shape
from defmesh.geometry import Ellipsoid, Sphere
from defmesh.mesh import Marker, Mesh, load_mesh, rect_grid, save_mesh

BASE = {"schema": "defmesh/1", "scenario": "t", "grid": {"resolution": [2, 2]}}


def _cfg(**extra):
    return {**json.loads(json.dumps(BASE)), **extra}


def test_defaults_filled_in():
    cfg = parse_config(_cfg())
    eff = cfg.effective()
    assert eff["run"]["dt"] == 0.05 and eff["run"]["T"] == 1.0 and eff["order"] == 3
    assert eff["monitor"]["source"] == "uniform"
    assert parse_config(eff).effective() == eff


@pytest.mark.parametrize("data,where", [
    (_cfg(montior={}), "montior"),
    (_cfg(run={"dt": -0.1}), "run.dt"),
    (_cfg(run={"dt": 0.5, "T": 0.25}), "dt"),
    (_cfg(run={"T": 1.5}), "run.T"),
    (_cfg(grid={"resolution": [2, 2], "markers": {"right": {"kind": "moving"}}}), "target"),
    (_cfg(order=1), "order"),
    ({**_cfg(), "schema": "defmesh/0"}, "schema"),
    (_cfg(grid={"resolution": [2, 2, 2]}, output={"requests": ["svg"]}), "svg"),
])
def test_invalid_configs_name_the_problem(data, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert where in str(exc.value)


def test_sphere_projection_default():
    cfg = parse_config(_cfg(grid={"resolution": [2, 2], "markers": {"right": {"kind": "moving", "name": "arc"}}},
                            targets={"arc": {"shape": {"type": "sphere", "center": [0, 0], "radius": 2}}}))
    assert cfg.targets["arc"].resolved_projection() == "radial"


def test_parse_shape_inline_and_file(tmp_path):
    assert parse_shape('{"type": "sphere", "center": [0, 0], "radius": 1.25}') == Sphere((0.0, 0.0), 1.25)
    (tmp_path / "s.toml").write_text('type = "ellipsoid"\ncenter = [0, 0]\nsemi_axes = [1, 2]\n')
    assert parse_shape(str(tmp_path / "s.toml")) == Ellipsoid((0.0, 0.0), (1.0, 2.0))


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_committed_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.scenario == name.removesuffix(".toml")


def test_bad_key_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('schema = "defmesh/1"\nscenario = "x"\n[grid]\nresolution = [2, 2]\n[montior]\nsource = "uniform"\n')
    assert main(["generate", str(path)]) == 1
    assert "montior" in capsys.readouterr().err


def test_check_valid_grid(tmp_path, capsys):
    save_mesh(rect_grid(3, 3), tmp_path / "g.json")
    assert main(["check", str(tmp_path / "g.json")]) == 0
    assert "volume: 1\n" in capsys.readouterr().out


def test_check_folded_exits_2(tmp_path, capsys):
    save_mesh(Mesh(2, [[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 1, 2, 3]]), tmp_path / "f.json")
    assert main(["check", str(tmp_path / "f.json")]) == 2
    assert "folded" in capsys.readouterr().err


def test_check_malformed_exits_1(tmp_path):
    (tmp_path / "m.json").write_text("{")
    assert main(["check", str(tmp_path / "m.json")]) == 1


def test_check_deviation_of_conformed_mesh(tmp_path, capsys, disk_refined):
    fine = disk_refined[1]
    save_mesh(fine, tmp_path / "fine.json")
    shape = json.dumps({"type": "sphere", "center": [0, 0], "radius": R})
    assert main(["check", str(tmp_path / "fine.json"), "--shape", shape]) == 0
    line = next(s for s in capsys.readouterr().out.splitlines() if s.startswith("deviation[arc]"))
    assert float(line.split(":")[1]) <= 1e-9


def test_generate_writes_outputs_and_reruns_identically(tmp_path, capsys):
    out1 = tmp_path / "a"
    assert main(["refine", str(CONFIGS / "quarter_disk.toml"), "--output-dir", str(out1)]) == 0
    names = {p.name for p in out1.iterdir()}
    assert {"effective_config.json", "coarse.json", "history.csv", "refined.json", "refine.msh", "refine.vtk",
            "coarse.svg", "refined.svg", "summary.json"} <= names
    # re-running the dumped effective config reproduces every file byte for byte
    eff = json.loads((out1 / "effective_config.json").read_text())
    out2 = tmp_path / "b"
    eff["output"]["dir"] = str(out2)
    (tmp_path / "eff.json").write_text(json.dumps(eff))
    assert main(["refine", str(tmp_path / "eff.json")]) == 0
    for name in names - {"effective_config.json"}:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_uniform_noop_returns_input_grid(tmp_path):
    assert main(["generate", str(CONFIGS / "uniform_noop.toml"), "--output-dir", str(tmp_path)]) == 0
    m = load_mesh(tmp_path / "coarse.json")
    assert np.abs(m.node_coords - rect_grid(4, 4).node_coords).max() <= 1e-12


def test_square_to_square_hoe_is_the_subdivided_grid(tmp_path):
    assert main(["hoe", str(CONFIGS / "square_to_square.toml"), "--output-dir", str(tmp_path)]) == 0
    fine = load_mesh(tmp_path / "refined.json")
    got = np.unique(np.round(fine.node_coords, 12), axis=0)
    assert np.array_equal(got, np.unique(np.round(rect_grid(12, 12).node_coords, 12), axis=0))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["hoe_min_jacobian"] > 0
    assert (tmp_path / "hoe.msh").exists() and (tmp_path / "hoe.svg").exists()


def test_overrides(tmp_path):
    assert main(["generate", str(CONFIGS / "uniform_noop.toml"), "--dt", "0.5",
                 "--seed-output-dir", str(tmp_path)]) == 0
    eff = json.loads((tmp_path / "effective_config.json").read_text())
    assert eff["run"]["dt"] == 0.5 and eff["output"]["dir"] == str(tmp_path)
    assert main(["hoe", str(CONFIGS / "uniform_noop.toml"), "--order", "1", "--output-dir", str(tmp_path)]) == 1


def test_fold_exits_2(tmp_path, capsys):
    cfg = {**_cfg(grid={"resolution": [8, 8]}), "run": {"dt": 1.0, "fold_action": "halt"},
           "monitor": {"source": "interface", "mode": "fixed-domain", "base": 1.0, "focus": 0.1, "width": 0.05,
                       "shape": {"type": "sphere", "center": [0.5, 0.5], "radius": 0.3}},
           "output": {"dir": str(tmp_path)}}
    (tmp_path / "fold.json").write_text(json.dumps(cfg))
    assert main(["generate", str(tmp_path / "fold.json")]) == 2
    assert "folded" in capsys.readouterr().err


@pytest.mark.parametrize("fmt", ["msh", "vtk", "svg"])
def test_export_command(tmp_path, fmt):
    m = rect_grid(2, 2, marker_assignment={"left": Marker("w", "slippery")})
    save_mesh(m, tmp_path / "m.json")
    out = tmp_path / f"m.{fmt}"
    assert main(["export", str(tmp_path / "m.json"), "--format", fmt, "--out", str(out)]) == 0
    assert out.stat().st_size > 0


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_every_config_runs(tmp_path, name):
    stage = "generate" if name == "ellipse_interface.toml" else "hoe"
    r = subprocess.run([sys.executable, "-m", "defmesh.cli", stage, str(CONFIGS / name), "--output-dir",
                        str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "outputs:" in r.stdout
