import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unimesh.conformer import conform, split_crack
from unimesh.elasticity import FemMesh, LoadShapes, Material, solve_problem
from unimesh.errors import ConfigError, PreconditionError, PropagationError
from unimesh.fileio import (CONFIG_KEYS, P2_SUBDIVISION, RunConfig, RunManifest,
                            atomic_write_text, build_run, config_help, output_dir,
                            parse_config, parse_config_text, read_vtk, run_propagation,
                            vtk_arrays, write_vtk)
from unimesh.geometry import structured_acute_mesh

SMALL = """\
problem = small   # mode-I specimen
mesh = graded
bbox = -2 -2 2 2
n = 10
levels = 2
load = uniaxial
crack = -0.5 0; 0.5 0
n_steps = 2
"""


def test_atomic_write(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write_text(p, "a\n")
    atomic_write_text(p, "b\n")
    assert p.read_text() == "b\n"
    assert [x.name for x in p.parent.iterdir()] == ["f.txt"]


def test_vtk_round_trip_triangulation(tmp_path, unit_mesh):
    write_vtk(unit_mesh, tmp_path / "m.vtk")
    d = read_vtk(tmp_path / "m.vtk")
    assert np.array_equal(d.points, unit_mesh.vertices)
    assert np.array_equal(d.triangles, unit_mesh.triangles)
    assert np.all(d.cell_types == 5)
    q = unit_mesh.quality()
    for v in (0, 17, 50):
        assert d.quality[v] == q[(unit_mesh.triangles == v).any(axis=1)].min()
    text = (tmp_path / "m.vtk").read_text().splitlines()
    assert text[:4] == ["# vtk DataFile Version 3.0", "unimesh", "ASCII",
                        "DATASET UNSTRUCTURED_GRID"]


def test_vtk_round_trip_solution(tmp_path):
    fm = FemMesh.from_triangulation(structured_acute_mesh((0.0, 0.0, 1.0, 1.0), 3))
    sol = solve_problem(fm, Material(), LoadShapes(g_bar=lambda x: np.c_[x[:, 1] ** 2, np.sin(x[:, 0])]))
    write_vtk(sol, tmp_path / "s.vtk")
    d = read_vtk(tmp_path / "s.vtk")
    assert np.array_equal(d.points, fm.nodes)
    assert np.array_equal(d.displacement, sol.u)
    assert len(d.triangles) == len(P2_SUBDIVISION) * len(fm.elements)
    assert np.array_equal(d.triangles[::len(fm.elements)], fm.elements[0][np.array(P2_SUBDIVISION)])


def test_vtk_conformed_mesh(tmp_path, fine_mesh, arc_crack):
    cm = split_crack(conform(fine_mesh, arc_crack))
    pts, tris, disp, q = vtk_arrays(cm)
    assert np.array_equal(pts, cm.positions) and disp is None
    write_vtk(cm, tmp_path / "c.vtk", quality=False)
    d = read_vtk(tmp_path / "c.vtk")
    assert np.array_equal(d.triangles, cm.triangles) and d.quality is None


def test_vtk_write_errors(tmp_path, unit_mesh):
    (tmp_path / "f").write_text("")
    with pytest.raises(PreconditionError):
        write_vtk(unit_mesh, tmp_path / "f" / "x.vtk")
    (tmp_path / "bad.vtk").write_text("hello\n")
    with pytest.raises(PreconditionError):
        read_vtk(tmp_path / "bad.vtk")


def test_config_defaults_and_round_trip():
    cfg = parse_config_text(SMALL)
    assert (cfg.problem, cfg.mesh, cfg.load, cfg.n, cfg.levels) == ("small", "graded", "uniaxial", 10, 2)
    assert cfg.bbox == (-2.0, -2.0, 2.0, 2.0)
    assert cfg.delta_ell is None and cfg.nu == 0.3
    again = parse_config_text(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()


@given(st.floats(-0.99, 0.49), st.floats(1e-3, 1e3), st.integers(1, 64), st.floats(1e-3, 1.0),
       st.sampled_from(["plane_strain", "plane_stress"]), st.sampled_from(["pcg", "direct"]))
def test_config_round_trip_property(nu, E, n, dl, mode, solver):
    cfg = RunConfig(problem="p", mesh="lattice", load="griffith", nu=nu, E=E, n=n,
                    delta_ell=dl, mode=mode, solver=solver, bbox=(0.1, -1 / 3, 2.0, np.pi))
    assert parse_config_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text, match", [
    ("problem = a\nmesh = lattice\n", "missing required key 'load'"),
    (SMALL + "colour = red\n", "unknown key 'colour'"),
    (SMALL + "n = 4\n", "duplicate key 'n'"),
    (SMALL + "nu = 0.7\n", r"nu out of range \(-1, 0.5\)"),
    (SMALL.replace("n = 10", "n = ten"), "n: cannot parse"),
    (SMALL.replace("n = 10", "n = 0"), "n must be positive"),
    (SMALL + "solver = gmres\n", "solver must be one of"),
    (SMALL.replace("bbox = -2 -2 2 2", "bbox = 0 0 -1 1"), "bbox must be"),
    (SMALL + "vtk = 2\n", "vtk must be 0 or 1"),
    (SMALL + "just words\n", "expected 'key = value'"),
    (SMALL.replace("mesh = graded", "mesh = file:nope.mesh"), "does not exist"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_config_file_refs_are_relative_to_config(tmp_path, unit_mesh):
    from unimesh.geometry import write_mesh
    write_mesh(unit_mesh, tmp_path / "u.mesh")
    (tmp_path / "run.cfg").write_text(SMALL.replace("mesh = graded", "mesh = file:u.mesh"))
    cfg = parse_config(tmp_path / "run.cfg")
    assert cfg.resolve(cfg.mesh) == tmp_path / "u.mesh"
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.cfg")


def test_config_help_lists_every_key():
    text = config_help()
    for k in CONFIG_KEYS:
        assert f"  {k} " in text
    assert "[required]" in text and "[derived]" in text


def test_build_run_uniaxial():
    s = build_run(parse_config_text(SMALL))
    assert s.h == pytest.approx(0.1)
    assert s.path.delta_ell == pytest.approx(0.2)
    assert s.path.ell0 == pytest.approx(1.0)
    assert s.mesh.vertices.min() == pytest.approx(-2.0)


def test_build_run_arc_and_affine(tmp_path):
    cfg = parse_config_text("problem = a\nmesh = lattice\nbbox = 0.4 -1.6 3.6 1.6\nn = 8\n"
                            "load = arc\n")
    s = build_run(cfg)
    assert s.path.ell0 == pytest.approx(2.0 * np.pi / 8)
    assert np.linalg.norm(s.path.knots, axis=1) == pytest.approx(np.full(len(s.path.knots), 2.0))
    assert callable(s.shapes)
    (tmp_path / "lin.txt").write_text("A = 1 2 3 4\nb = 0.5 -0.5\n")
    (tmp_path / "r.cfg").write_text("problem = l\nmesh = lattice\nload = file:lin.txt\n"
                                    "crack = 0.3 0.5; 0.7 0.5\n")
    s = build_run(parse_config(tmp_path / "r.cfg"))
    assert s.shapes.g_bar(np.array([[1.0, 1.0]])) == pytest.approx(np.array([[3.5, 6.5]]))
    (tmp_path / "lin.txt").write_text("A = 1 2\n")
    with pytest.raises(ConfigError):
        build_run(parse_config(tmp_path / "r.cfg"))


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.delenv("UNIMESH_OUT", raising=False)
    assert output_dir("x") == output_dir("x").__class__("x")
    monkeypatch.setenv("UNIMESH_OUT", str(tmp_path))
    assert output_dir("x") == tmp_path


def test_run_propagation_outputs_are_reproducible(tmp_path, monkeypatch):
    monkeypatch.delenv("UNIMESH_OUT", raising=False)
    cfg = parse_config_text(SMALL)
    m1 = run_propagation(cfg, out=tmp_path / "a")
    m2 = run_propagation(cfg, out=tmp_path / "b")
    assert m1.status == "ok"
    assert m1.artifacts == ["config.txt", "step_000.vtk", "step_001.vtk", "record.csv", "path.csv"]
    for name in m1.artifacts:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back = RunManifest.read(tmp_path / "a" / "manifest.json")
    assert back.config["problem"] == "small" and back.status == "ok"
    assert set(back.versions) == {"unimesh", "numpy", "scipy", "python"}
    assert len(back.timings["steps"]) == 2
    assert parse_config(tmp_path / "a" / "config.txt") == cfg


def test_run_propagation_failure_still_writes_manifest(tmp_path):
    cfg = parse_config_text(SMALL.replace("load = uniaxial", "load = uniaxial\nsigma = -1"))
    with pytest.raises(PropagationError):
        run_propagation(cfg, out=tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"].startswith("failed at step 0 [kink]")
    assert (tmp_path / "record.csv").read_text().count("\n") == 1
