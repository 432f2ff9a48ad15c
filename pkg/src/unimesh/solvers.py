"""Iterative solver for the symmetric positive definite FEM systems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError


@dataclass
class SolveInfo:
    iterations: int
    residuals: list
    method: str


def default_maxiter(n: int) -> int:
    return int(20 * np.sqrt(n)) + 1000


def pcg(A, b, tol: float = 1e-10, maxiter: int | None = None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``||b - A x|| <= tol * ||b||``. Deterministic for fixed inputs.

    Returns:
        (x, SolveInfo)

    Raises:
        SolverError: on breakdown (non-positive curvature) or if ``maxiter``
            is exhausted; ``residuals`` holds the relative residual history.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if maxiter is None:
        maxiter = default_maxiter(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has non-positive diagonal entries; system is not SPD")
    minv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(0, [0.0], "pcg")
    r = b - A @ x
    z = minv * r
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / bnorm]
    for it in range(1, maxiter + 1):
        if hist[-1] <= tol:
            return x, SolveInfo(it - 1, hist, "pcg")
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("CG breakdown: matrix is singular or indefinite", hist)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        hist.append(np.linalg.norm(r) / bnorm)
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if hist[-1] <= tol:
        return x, SolveInfo(maxiter, hist, "pcg")
    raise SolverError(f"CG did not converge in {maxiter} iterations "
                      f"(relative residual {hist[-1]:.3e})", hist)


def direct(A, b):
    """Sparse LU solve (SuperLU); used when requested explicitly."""
    A = sp.csc_matrix(A)
    x = spla.spsolve(A, b)
    res = np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1e-300)
    if not np.all(np.isfinite(x)):
        raise SolverError("direct solve produced non-finite values; system is singular", [res])
    return x, SolveInfo(1, [res], "direct")


def solve_spd(A, b, tol: float = 1e-10, method: str = "pcg", maxiter: int | None = None):
    if method == "pcg":
        return pcg(A, b, tol=tol, maxiter=maxiter)
    if method == "direct":
        return direct(A, b)
    raise ValueError(f"unknown solver method {method!r}")
