import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from gpcspline.cli import run
from gpcspline.control_grid import add_boundary_layer, build_regular
from gpcspline.fitting import surface_samples
from gpcspline.param import bent_tube, cube_mesh
from gpcspline.spline_eval import ComponentSpline, evaluate, load_spline


def err_lines(capsys):
    return [l for l in capsys.readouterr().err.splitlines() if l.strip()]


@pytest.fixture
def identity(tmp_path):
    p = tmp_path / "id.json"
    assert run(["init", "--knots-u", "0 1/2 1", "--knots-v", "0 1", "--knots-w", "0 1", "--out", str(p)]) == 0
    return p


def test_weights_table_type1(capsys):
    assert run(["weights-table", "--pattern", "type-1"]) == 0
    out = capsys.readouterr().out
    for v in ("17/18", "35/36", "8/9"):
        assert v in out
    assert "match: yes" in out
    assert "MISMATCH" not in out


def test_eval_identity_midpoint(identity, capsys):
    capsys.readouterr()
    assert run(["eval", "--archive", str(identity), "--at", "0.5,0.5,0.5"]) == 0
    vals = [float(x) for x in capsys.readouterr().out.split()]
    assert np.abs(np.array(vals) - 0.5).max() <= 1e-12


def test_eval_params_file(identity, tmp_path, capsys):
    q = tmp_path / "q.txt"
    np.savetxt(q, [[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]])
    capsys.readouterr()
    assert run(["eval", "--archive", str(identity), "--params", str(q)]) == 0
    rows = np.array([[float(x) for x in l.split()] for l in capsys.readouterr().out.splitlines()])
    assert np.abs(rows[:, :3] - rows[:, 3:]).max() <= 1e-12


def test_audit_clean_archive(identity, capsys):
    assert run(["audit", "--archive", str(identity)]) == 0
    assert "boundary violations 0" in capsys.readouterr().out


def test_audit_corrupt_weight(identity, tmp_path, capsys):
    doc = json.loads(identity.read_text())
    doc["points"][5]["weight"] = "3/4"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    capsys.readouterr()
    assert run(["audit", "--archive", str(bad)]) == 1
    cap = capsys.readouterr()
    assert "unity deviation" in cap.out
    errs = [l for l in cap.err.splitlines() if l.strip()]
    assert len(errs) == 1 and errs[0].startswith("gpcspline: error[validation]:")


def test_audit_graph_census(tmp_path, capsys):
    doc = {"cuboids": [{"id": 0, "lo": [0, 0, 0], "hi": [1, 1, 1]}], "glues": []}
    g = tmp_path / "g.json"
    g.write_text(json.dumps(doc))
    assert run(["audit", "--graph", str(g)]) == 0
    assert "type-1=0" in capsys.readouterr().out


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 1
    errs = err_lines(capsys)
    assert len(errs) == 1 and errs[0].startswith("gpcspline: error[validation]:")


def test_missing_file(tmp_path, capsys):
    assert run(["eval", "--archive", str(tmp_path / "nope.json"), "--at", "0,0,0"]) == 1
    assert len(err_lines(capsys)) == 1


def test_refine_then_eval(identity, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run(["refine", "--archive", str(identity), "--cells", "0", "--out", str(out)]) == 0
    s = load_spline(out)
    P = np.random.default_rng(0).random((50, 3))
    assert np.abs(evaluate(s, P).value - P).max() <= 1e-12


def test_merge_pattern(tmp_path, capsys):
    out = tmp_path / "m.json"
    assert run(["merge", "--pattern", "type-3", "--samples", "500", "--out", str(out)]) == 0
    assert "boundary violations 0" in capsys.readouterr().out
    capsys.readouterr()
    assert run(["audit", "--archive", str(out), "--samples", "500"]) == 0


def test_merge_needs_pattern(tmp_path, capsys):
    assert run(["merge", "--out", str(tmp_path / "m.json")]) == 1
    assert len(err_lines(capsys)) == 1


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("knots_u = 0 1 2\nform = rational\n")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["--config", str(cfg), "init", "--out", str(a)]) == 0
    assert run(["--config", str(cfg), "init", "--form", "semi-standard", "--out", str(b)]) == 0
    sa, sb = load_spline(a), load_spline(b)
    assert sa.form == "rational" and sb.form == "semi-standard"
    assert len(sa.grid.S[0]) == 3


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 1\n")
    assert run(["--config", str(cfg), "init", "--out", str(tmp_path / "x.json")]) == 1


def test_deterministic_archives(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(["merge", "--pattern", "type-4", "--samples", "200", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_fit_component(tmp_path, capsys):
    s = ComponentSpline(add_boundary_layer(build_regular([0, 0.5, 1], [0, 0.5, 1], [0, 0.5, 1])))
    Q = surface_samples(s, 10)
    f = tmp_path / "s.txt"
    np.savetxt(f, np.column_stack([Q, bent_tube(Q)]))
    out = tmp_path / "fc.json"
    args = ["fit-component", "--samples", str(f), "--out", str(out)]
    for a in "uvw":
        args += [f"--knots-{a}", "0 1/2 1"]
    assert run(args) == 0
    assert "boundary residual" in capsys.readouterr().out
    assert load_spline(out).grid.layered


def test_fit_gpc(tmp_path, capsys):
    t = np.linspace(0, 1, 6)
    P = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
    f = tmp_path / "s.txt"
    np.savetxt(f, np.column_stack([P, 2 * P + 1]))
    out = tmp_path / "g.json"
    assert run(["fit-gpc", "--samples", str(f), "--out", str(out)]) == 0
    assert "level rms" in capsys.readouterr().out


def test_param_surface_and_volume(tmp_path, capsys):
    from gpcspline.mesh_io import save_off

    m, ann = cube_mesh(3)
    mp, ap = tmp_path / "c.off", tmp_path / "a.json"
    save_off(m, mp)
    ap.write_text(json.dumps({"corners": ann.corners, "poly_edges": ann.poly_edges, "rectangles": ann.rectangles}))
    out = tmp_path / "uvw.txt"
    assert run(["param-surface", "--mesh", str(mp), "--annotation", str(ap), "--out", str(out)]) == 0
    uvw = np.loadtxt(out)
    assert uvw.shape == (len(m.vertices), 4)
    vt = tmp_path / "v.vtk"
    assert run(["param-volume", "--mesh", str(mp), "--annotation", str(ap), "--resolution", "4", "4", "4",
                "--out", str(vt)]) == 0
    assert "converged True" in capsys.readouterr().out


def test_param_volume_nonconvergence_is_numeric(tmp_path, capsys):
    vt = tmp_path / "t.vtk"
    code = run(["param-volume", "--synthetic", "bent-tube", "--resolution", "8", "8", "8",
                "--max-iters", "2", "--relax-threshold", "1e-15", "--out", str(vt)])
    assert code == 2
    assert err_lines(capsys)[-1].startswith("gpcspline: error[numeric]:")


def test_export_vtk(identity, tmp_path, capsys):
    out = tmp_path / "e.vtk"
    assert run(["export-vtk", "--archive", str(identity), "--resolution", "3", "3", "3", "--out", str(out)]) == 0
    assert "POINTS 27 double" in out.read_text()


@pytest.mark.skipif(shutil.which("gpcspline") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["gpcspline", "weights-table", "--pattern", "type-4"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "215/216" in r.stdout


def test_module_entry():
    r = subprocess.run([sys.executable, "-m", "gpcspline.cli", "nosuch"], capture_output=True, text=True)
    assert r.returncode == 1
    assert r.stderr.strip().count("\n") == 0
