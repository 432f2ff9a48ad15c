import numpy as np
import pytest
from hypothesis import given, strategies as st

from unimesh.elasticity import (FemMesh, LoadShapes, Material, assemble, energy_error, l2_error,
                                shape_gradients, shape_values, solve_problem, stiffness_matrix)
from unimesh.errors import PreconditionError
from unimesh.geometry import refine_uniform, structured_acute_mesh
from unimesh.problems import Manufactured, uniaxial_shapes

bary = st.tuples(st.floats(0, 1), st.floats(0, 1)).filter(lambda t: t[0] + t[1] <= 1)


@pytest.fixture(scope="module")
def fem():
    return FemMesh.from_triangulation(structured_acute_mesh((0.0, 0.0, 1.0, 1.0), 4))


def test_material_constants():
    m = Material(E=2.0, nu=0.25)
    assert m.mu == pytest.approx(0.8)
    assert m.lam == pytest.approx(0.8)
    assert m.kappa == pytest.approx(2.0)
    assert m.E_star == pytest.approx(2.0 / (1 - 0.0625))
    ps = Material(E=2.0, nu=0.25, mode="plane_stress")
    assert ps.kappa == pytest.approx(2.75 / 1.25)
    assert ps.lam == pytest.approx(2 * 0.8 * 0.8 / (0.8 + 1.6))
    assert ps.E_star == 2.0


@pytest.mark.parametrize("kw", [dict(E=0.0), dict(nu=0.5), dict(nu=-1.0), dict(mode="3d"),
                                dict(K_c=-1.0)])
def test_material_validation(kw):
    with pytest.raises(PreconditionError):
        Material(**kw)


@given(bary)
def test_shape_functions_partition_unity(b):
    lam = np.array([1 - b[0] - b[1], b[0], b[1]])
    N = shape_values(lam)
    assert N.sum() == pytest.approx(1.0)
    glam = np.array([[[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]])
    G = shape_gradients(lam[None], glam)[0]
    assert G.sum(axis=0) == pytest.approx([0.0, 0.0], abs=1e-12)


def test_shape_functions_are_nodal():
    nodes = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [.5, .5, 0], [0, .5, .5], [.5, 0, .5]])
    assert np.array([shape_values(l) for l in nodes]) == pytest.approx(np.eye(6), abs=1e-14)


def test_p2_nodes(fem):
    m = fem.elements
    assert m.shape[1] == 6
    # midside nodes sit at edge midpoints
    p = fem.nodes
    assert p[m[:, 3]] == pytest.approx(0.5 * (p[m[:, 0]] + p[m[:, 1]]))
    assert p[m[:, 4]] == pytest.approx(0.5 * (p[m[:, 1]] + p[m[:, 2]]))
    assert p[m[:, 5]] == pytest.approx(0.5 * (p[m[:, 2]] + p[m[:, 0]]))


def test_stiffness_symmetric_with_rigid_null_space(fem):
    K = stiffness_matrix(fem, Material())
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    x, y = fem.nodes.T
    for mode in (np.c_[np.ones_like(x), 0 * x], np.c_[0 * x, np.ones_like(x)], np.c_[-y, x]):
        assert np.abs(K @ mode.reshape(-1)).max() <= 1e-12


def test_threaded_assembly_is_identical(fem):
    K1 = stiffness_matrix(fem, Material(), threads=1)
    K2 = stiffness_matrix(fem, Material(), threads=3)
    assert (K1 != K2).nnz == 0


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-1, 1), st.floats(-1, 1))
def test_linear_patch(a, b, c, d, e, f):
    fm = FemMesh.from_triangulation(structured_acute_mesh((0.0, 0.0, 1.0, 1.0), 3))
    A = np.array([[a, b], [c, d]])
    t = np.array([e, f])
    sol = solve_problem(fm, Material(), LoadShapes(g_bar=lambda x: x @ A.T + t), tol=1e-13)
    assert np.abs(sol.u - (fm.nodes @ A.T + t)).max() <= 1e-9


def test_uniaxial_traction_gives_uniform_stress():
    box = (0.0, 0.0, 2.0, 1.0)
    fm = FemMesh.from_triangulation(structured_acute_mesh(box, 4))
    mat = Material(E=3.0, nu=0.2)
    sol = solve_problem(fm, mat, uniaxial_shapes(box, 0.7), tol=1e-13)
    for x in ([0.3, 0.3], [1.7, 0.8], [1.0, 0.5]):
        _, _, s = sol.evaluate(x)
        assert s == pytest.approx(np.array([[0.0, 0.0], [0.0, 0.7]]), abs=1e-9)
    assert sol.equilibrium_residual() <= 1e-10
    # energy of a uniform field: sigma^2 / (2 E*) times the area
    assert sol.strain_energy() == pytest.approx(mat.E_star ** -1 * 0.49 / 2 * 2.0, rel=1e-9)


def test_load_scale_is_linear(fem):
    shapes = LoadShapes(g_bar=lambda x: np.c_[x[:, 1] ** 2, x[:, 0] * x[:, 1]])
    s1 = solve_problem(fem, Material(), shapes, C=1.0, tol=1e-13)
    s3 = solve_problem(fem, Material(), shapes, C=3.0, tol=1e-13)
    assert s3.u == pytest.approx(3.0 * s1.u, abs=1e-12)
    s2 = solve_problem(fem, Material(), shapes.scaled(2.0), tol=1e-13)
    assert s2.u == pytest.approx(2.0 * s1.u, abs=1e-12)


def test_pcg_and_direct_agree(fem):
    m = Manufactured(Material())
    a = solve_problem(fem, Material(), m.load_shapes(), tol=1e-13)
    b = solve_problem(fem, Material(), m.load_shapes(), method="direct")
    assert a.u == pytest.approx(b.u, abs=1e-11)


def test_manufactured_convergence_rates():
    mat = Material()
    m = Manufactured(mat)
    mesh = structured_acute_mesh((0.0, 0.0, 1.0, 1.0), 4)
    errs = []
    for _ in range(3):
        sol = solve_problem(FemMesh.from_triangulation(mesh), mat, m.load_shapes())
        errs.append((l2_error(sol, m.displacement), energy_error(sol, m.gradient)))
        mesh = refine_uniform(mesh)
    e = np.array(errs)
    orders = np.log2(e[:-1] / e[1:])
    assert orders[:, 0] == pytest.approx([3.013, 3.005], abs=2e-3)
    assert orders[:, 1] == pytest.approx([1.994, 1.997], abs=2e-3)


def test_manufactured_body_force_satisfies_navier():
    # finite-difference check of div sigma + b = 0
    mat = Material(E=1.7, nu=0.35)
    m = Manufactured(mat)
    x = np.array([[0.3, 0.6], [0.8, 0.1]])
    h = 1e-4
    div = np.zeros((2, 2))
    for j, d in enumerate(np.eye(2)):
        sp_ = mat.stress(m.gradient(x + h * d))
        sm_ = mat.stress(m.gradient(x - h * d))
        div += (sp_ - sm_)[:, :, j] / (2 * h)
    assert div + m.body_force(x) == pytest.approx(np.zeros((2, 2)), abs=1e-6)


def test_locate_and_evaluate(fem):
    g = lambda x: np.c_[x[:, 0] ** 2, x[:, 0] * x[:, 1]]
    sol = solve_problem(fem, Material(), LoadShapes(g_bar=g), tol=1e-13)
    t, lam = fem.locate([0.3, 0.4])
    assert lam.sum() == pytest.approx(1.0) and np.all(lam >= -1e-12)
    with pytest.raises(PreconditionError):
        fem.locate([2.0, 2.0])
    u, grad, _ = sol.evaluate([0.0, 0.5])
    assert u == pytest.approx([0.0, 0.0], abs=1e-12)


def test_assemble_requires_constraints(fem):
    from unimesh.errors import SolverError
    with pytest.raises((SolverError, PreconditionError)):
        solve_problem(fem, Material(), LoadShapes(b_bar=lambda x: np.ones_like(x)))
    sysm = assemble(fem, Material(), LoadShapes(g_bar=lambda x: 0 * x))
    assert len(sysm.free) + len(sysm.fixed) == fem.n_dofs
