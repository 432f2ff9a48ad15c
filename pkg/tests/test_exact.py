import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from unimesh.elasticity import Material
from unimesh.errors import PreconditionError
from unimesh.exact import (GriffithField, arc_crack_field, arc_crack_sif, arc_history_field,
                           arc_loading_history, griffith_field, inclined_crack_sif)

MAT = Material(E=2.0, nu=0.3)


def fields():
    S = np.array([[0.4, -0.3], [-0.3, 1.1]])
    return [GriffithField(a=1.3, far_field=S, material=MAT, center=np.array([0.2, -0.1]), beta=0.4),
            arc_crack_field(2.0, 0.5, S, MAT, center=(0.1, 0.3), beta=0.7)]


def fd_gradient(f, x, h=1e-6):
    return np.stack([(f(x + h * d) - f(x - h * d)) / (2 * h) for d in np.eye(2)], -1)


@pytest.mark.parametrize("k", [0, 1])
@given(st.floats(-4, 4), st.floats(-4, 4))
def test_stress_is_consistent_with_displacement(k, x, y):
    F = fields()[k]
    p = np.array([x, y])
    d = np.abs(np.linalg.norm(F._to_local(p)) - 1.0) if k else 0.0
    assume(np.min(np.linalg.norm(np.array(F.tips) - p, axis=1)) > 0.3)
    assume(min(abs(F._to_local(p)[0].imag), 1.0) > 0.05 or d > 0.05)
    grad = fd_gradient(F.displacement, p)
    assert MAT.stress(grad) == pytest.approx(F.stress(p), abs=1e-6)


@pytest.mark.parametrize("k", [0, 1])
def test_equilibrium(k):
    F = fields()[k]
    h = 1e-5
    for p in ([2.5, 1.0], [-1.0, -2.2], [0.3, 3.1]):
        p = np.asarray(p)
        div = sum((F.stress(p + h * d) - F.stress(p - h * d))[:, j] / (2 * h)
                  for j, d in enumerate(np.eye(2)))
        assert div == pytest.approx([0.0, 0.0], abs=1e-6)


@pytest.mark.parametrize("k", [0, 1])
def test_far_field(k):
    F = fields()[k]
    S = F.stress(np.array([3e4, -4e4]))
    assert S == pytest.approx(F.far_field, abs=1e-7)


def test_griffith_faces_are_traction_free():
    F = griffith_field(1.5, 2.0, MAT)
    x = np.c_[np.linspace(-1.9, 1.9, 9), np.zeros(9)]
    for side in (1, -1):
        S = F.stress(x, side=np.full(9, side))
        assert S[:, :, 1] == pytest.approx(np.zeros((9, 2)), abs=1e-10)
    with pytest.raises(PreconditionError):
        F.stress(x)


@given(st.floats(-0.999, 0.999))
def test_griffith_opening_is_elliptical(t):
    sigma, a = 1.5, 2.0
    F = griffith_field(sigma, a, MAT)
    x = np.array([[t * a, 0.0]])
    jump = F.displacement(x, side=[1]) - F.displacement(x, side=[-1])
    cod = (MAT.kappa + 1) / (2 * MAT.mu) * sigma * np.sqrt(a * a - x[0, 0] ** 2)
    assert jump[0] == pytest.approx([0.0, cod], abs=1e-12)


def test_griffith_sif_and_near_tip_stress():
    F = griffith_field(1.0, 1.0, MAT)
    assert F.sif()[0] == pytest.approx((np.sqrt(np.pi), 0.0))
    r = 1e-8
    syy = F.stress(np.array([1.0 + r, 0.0]))[1, 1]
    assert syy * np.sqrt(2 * np.pi * r) == pytest.approx(np.sqrt(np.pi), rel=1e-6)


@given(st.floats(-1.4, 1.4))
def test_inclined_crack_sif(beta):
    # uniaxial tension along y, crack rotated by beta
    F = GriffithField(a=0.7, far_field=np.diag([0.0, 2.0]), material=MAT, beta=beta)
    k1, k2 = inclined_crack_sif(2.0, 0.7, beta)
    assert F.sif()[1] == pytest.approx((k1, k2), abs=1e-12)


def test_griffith_preconditions():
    with pytest.raises(PreconditionError):
        griffith_field(0.0, 1.0, MAT)
    with pytest.raises(PreconditionError):
        GriffithField(a=-1.0, far_field=np.eye(2), material=MAT)


@given(st.floats(0.05, 1.5))
def test_arc_equibiaxial_closed_form(alpha):
    R, s = 1.7, 0.9
    k = s * np.sqrt(np.pi * R * np.sin(alpha)) / (1 + np.sin(alpha / 2) ** 2)
    start, end = arc_crack_sif(R, alpha, s * np.eye(2), MAT)
    assert start[0] == pytest.approx(k * np.cos(alpha / 2), rel=1e-10)
    assert end[0] == pytest.approx(k * np.cos(alpha / 2), rel=1e-10)
    assert abs(end[1]) == pytest.approx(k * np.sin(alpha / 2), rel=1e-10)
    assert end[1] == pytest.approx(-start[1], rel=1e-10)


def test_shallow_arc_tends_to_straight_crack():
    R, alpha = 1e4, 1e-4
    # tension normal to the chord, which at beta = 0 is along x
    (k1, k2), _ = arc_crack_sif(R, alpha, np.diag([1.0, 0.0]), MAT)
    assert k1 == pytest.approx(np.sqrt(np.pi * R * alpha), rel=1e-4)
    assert abs(k2) < 1e-3 * k1


def test_arc_faces_are_traction_free():
    F = arc_crack_field(2.0, 0.6, np.array([[0.3, 0.2], [0.2, 1.0]]), MAT, beta=0.3)
    th = 0.3 + np.linspace(-0.55, 0.55, 7)
    x = 2.0 * np.c_[np.cos(th), np.sin(th)]
    n = np.c_[np.cos(th), np.sin(th)]
    for side in (1, -1):
        S = F.stress(x, side=np.full(7, side))
        assert np.einsum("kij,kj->ki", S, n) == pytest.approx(np.zeros((7, 2)), abs=1e-8)


def test_arc_preconditions():
    with pytest.raises(PreconditionError):
        arc_crack_field(2.0, 1.6, np.eye(2), MAT)
    with pytest.raises(PreconditionError):
        arc_crack_field(-2.0, 0.5, np.eye(2), MAT)
    with pytest.raises(PreconditionError):
        arc_history_field(7.0, R=2.0)


@given(st.floats(0.3, 1.6), st.floats(-0.5, 0.5))
def test_arc_history_zeroes_end_mode_two(ell, parallel):
    F = arc_history_field(ell, R=2.0, parallel=parallel)
    (_, _), (k1, k2) = F.sif()
    assert k1 > 0
    assert abs(k2) <= 1e-12 * k1
    end = 2.0 * np.array([np.cos(-np.pi / 8 + ell / 2), np.sin(-np.pi / 8 + ell / 2)])
    assert F.tips[1] == pytest.approx(end)


def test_arc_loading_history_matches_field():
    sh = arc_loading_history(0.9)
    x = np.array([[3.0, 1.0], [0.5, -1.5]])
    assert np.array_equal(sh.g_bar(x), arc_history_field(0.9).displacement(x))
