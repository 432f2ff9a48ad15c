import numpy as np
import pytest
from hypothesis import given, strategies as st

from unimesh.conformer import (POSITIVELY_CUT, ConformParams, classify, conform, interior_mesh,
                               read_sidecar, relax, split_crack)
from unimesh.curves import fit_spline
from unimesh.errors import PreconditionError, RefinementNeededError
from unimesh.geometry import Triangulation, read_mesh, signed_areas, signed_quality, structured_acute_mesh
from unimesh.problems import random_smooth_curve

from conftest import circle_points


def hexagon(center=(0.0, 0.0)):
    ring = circle_points(1.0, 6)
    pts = np.vstack([center, ring])
    tris = np.array([[0, 1 + i, 1 + (i + 1) % 6] for i in range(6)])
    return Triangulation(np.vstack([[0.0, 0.0], ring]), tris), pts


def test_relax_recentres_hexagon():
    mesh, pts = hexagon((0.2, -0.1))
    out = relax(pts, mesh, [0])
    assert out[0] == pytest.approx([0.0, 0.0], abs=1e-15)
    assert np.array_equal(out[1:], pts[1:])


def test_relax_leaves_optimal_patch_alone():
    mesh, pts = hexagon()
    assert relax(pts, mesh, [0]) == pytest.approx(pts, abs=1e-15)


@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
def test_relax_never_lowers_min_quality(x, y):
    mesh, pts = hexagon((x, y))
    q0 = signed_quality(pts, mesh.triangles).min()
    out = relax(pts, mesh, [0], ConformParams(relax_iterations=3))
    assert signed_quality(out, mesh.triangles).min() >= q0 - 1e-15


def test_classification(fine_mesh, straight_crack):
    cls = classify(fine_mesh, straight_crack)
    above = fine_mesh.vertices[:, 1] > 0.52
    below = fine_mesh.vertices[:, 1] < 0.52
    assert np.all(cls.vertex_side[above] == 1) and np.all(cls.vertex_side[below] == -1)
    pc = cls.positively_cut
    assert len(pc) > 0
    assert np.all(cls.tri_cut[pc] == POSITIVELY_CUT)
    assert np.all((np.where(cls.vertex_side >= 0, 1, -1)[fine_mesh.triangles[pc]]).sum(1) == 1)


def check_conformed(cm, curve, q_min=0.2):
    assert np.all(signed_quality(cm.positions, cm.triangles) > 0)
    assert cm.min_quality >= q_min
    assert cm.boundary_deviation() <= 1e-10
    if not curve.closed:
        tips = cm.positions[list(cm.tip_vertex_ids)]
        assert np.array_equal(tips[0], curve.eval(0.0))
        assert np.array_equal(tips[1], curve.eval(curve.length))


def test_conform_open_crack(fine_mesh, arc_crack):
    before = fine_mesh.vertices.copy()
    cm = conform(fine_mesh, arc_crack)
    check_conformed(cm, arc_crack)
    # the universal mesh is not touched and only vertices near the crack move
    assert np.array_equal(fine_mesh.vertices, before)
    moved = np.linalg.norm(cm.positions - before, axis=1) > 0
    dist = np.asarray(arc_crack.closest_point(before[moved]).distance)
    assert dist.max() <= 3 * (1 + ConformParams().rings) * cm.h_local


def test_conform_is_deterministic_and_reuses_base(fine_mesh, arc_crack, straight_crack):
    a = conform(fine_mesh, arc_crack)
    conform(fine_mesh, straight_crack)
    b = conform(fine_mesh, arc_crack)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.gamma.vertices, b.gamma.vertices)
    assert a.base is b.base is fine_mesh


def test_conform_closed_curve(fine_mesh):
    c = fit_spline(circle_points(0.3, 12, center=(0.5, 0.5)), closed=True)
    cm = conform(fine_mesh, c)
    check_conformed(cm, c)
    assert cm.gamma.closed and cm.tip_vertex_ids == ()
    # the interior is bounded exactly by the Gamma_h polygon
    inner = interior_mesh(cm)
    x, y = cm.positions[cm.gamma.vertices].T
    polygon = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    assert signed_areas(inner.vertices, inner.triangles).sum() == pytest.approx(polygon, rel=1e-12)
    assert polygon == pytest.approx(np.pi * 0.09, rel=2e-2)
    with pytest.raises(PreconditionError):
        split_crack(cm)


def test_conform_rejects_unresolved_curvature(fine_mesh):
    tiny = fit_spline(circle_points(0.02, 8, center=(0.5, 0.5)), closed=True)
    with pytest.raises(RefinementNeededError, match="radius of curvature"):
        conform(fine_mesh, tiny)


def test_split_crack_topology(fine_mesh, arc_crack):
    cm = conform(fine_mesh, arc_crack)
    sp = split_crack(cm)
    n_inner = len(cm.gamma.vertices) - 2
    assert len(sp.duplicated_pairs) == n_inner
    assert len(sp.positions) == len(cm.positions) + n_inner
    assert sp.mesh.euler_characteristic() == cm.mesh.euler_characteristic() - 1
    for v, c in sp.duplicated_pairs:
        assert np.array_equal(sp.positions[v], sp.positions[c])
    # both flank edge sets are boundary edges of the split mesh
    bnd = {tuple(e) for e in sp.mesh.edges[sp.mesh.adjacency.boundary_edges].tolist()}
    for e in np.vstack([sp.crack_edges, sp.crack_edges_negative]):
        assert tuple(sorted(int(x) for x in e)) in bnd
    assert set(np.unique(sp.flank)) == {-1, 0, 1}
    assert np.all(signed_quality(sp.positions, sp.triangles) > 0)


def test_conformed_write_round_trip(tmp_path, fine_mesh, arc_crack):
    sp = split_crack(conform(fine_mesh, arc_crack))
    sp.write(tmp_path / "c.mesh", tmp_path / "c.json")
    m = read_mesh(tmp_path / "c.mesh")
    assert np.array_equal(m.vertices, sp.positions)
    assert np.array_equal(m.triangles, sp.triangles)
    side = read_sidecar(tmp_path / "c.json")
    assert side["duplicated_pairs"] == [list(p) for p in sp.duplicated_pairs]
    assert side["crack_edges"] == sp.crack_edges.tolist()
    assert side["closed"] is False


@given(st.integers(0, 10 ** 6))
def test_random_cracks_conform_and_split(seed):
    base = structured_acute_mesh((0.0, 0.0, 1.0, 1.0), 12)
    curve = random_smooth_curve(np.random.default_rng(seed), (0, 0, 1, 1), base.h_max)
    cm = conform(base, curve)
    check_conformed(cm, curve)
    sp = split_crack(cm)
    assert sp.mesh.euler_characteristic() == 0
    assert np.all(signed_quality(sp.positions, sp.triangles) > 0)
