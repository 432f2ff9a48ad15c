import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from unimesh.errors import SolverError
from unimesh.solvers import direct, pcg, solve_spd


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


@given(st.integers(2, 60), st.integers(0, 2 ** 31))
def test_pcg_matches_direct(n, seed):
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=0.3, random_state=rng)
    A = (B @ B.T + sp.eye(n) * n).tocsr()
    b = rng.normal(size=n)
    x1, info = pcg(A, b, tol=1e-12)
    x2, _ = direct(A, b)
    assert np.linalg.norm(A @ x1 - b) <= 1e-12 * np.linalg.norm(b) * 1.0001
    assert x1 == pytest.approx(x2, rel=1e-8, abs=1e-10)
    assert info.residuals[-1] <= 1e-12


def test_pcg_residual_history_and_determinism():
    A = laplacian_1d(50)
    b = np.linspace(1, 2, 50)
    x, info = pcg(A, b)
    y, info2 = pcg(A, b)
    assert np.array_equal(x, y)
    assert info.iterations == len(info.residuals) - 1 == info2.iterations
    assert info.residuals[0] == 1.0


def test_pcg_zero_rhs():
    x, info = pcg(laplacian_1d(5), np.zeros(5))
    assert np.all(x == 0) and info.iterations == 0


def test_pcg_reports_non_convergence():
    with pytest.raises(SolverError) as e:
        pcg(laplacian_1d(200), np.ones(200), maxiter=3)
    assert len(e.value.residuals) == 4


def test_pcg_rejects_indefinite_and_singular():
    with pytest.raises(SolverError):
        pcg(sp.diags([1.0, -1.0]), np.ones(2))
    singular = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        pcg(singular, np.array([1.0, -1.0]))


def test_solve_spd_dispatch():
    A = laplacian_1d(10)
    b = np.ones(10)
    assert solve_spd(A, b, method="direct")[1].method == "direct"
    with pytest.raises(ValueError):
        solve_spd(A, b, method="gmres")
