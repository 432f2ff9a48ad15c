"""Plane linear elasticity with quadratic (P2) triangles.

Nodes are the mesh vertices followed by one midnode per edge; element node
order is ``v0, v1, v2, m01, m12, m20``. Degrees of freedom are interleaved,
``(u_x, u_y)`` of node ``k`` at ``2k, 2k+1``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import PreconditionError, SolverError
from .geometry import build_adjacency, signed_areas
from .solvers import SolveInfo, solve_spd

PLANE_STRAIN, PLANE_STRESS = "plane_strain", "plane_stress"

# degree-4 rule on the reference triangle (barycentric points, weights sum to 1)
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
QUAD_BARY = np.array([
    [_A1, _A1, 1 - 2 * _A1], [_A1, 1 - 2 * _A1, _A1], [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2], [_A2, 1 - 2 * _A2, _A2], [1 - 2 * _A2, _A2, _A2],
])
QUAD_W = np.array([_W1] * 3 + [_W2] * 3)

# 3-point Gauss-Legendre on [0, 1] for edge integrals
_GL_T = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class Material:
    """Isotropic linear elastic material.

    Attributes:
        E: Young's modulus.
        nu: Poisson's ratio.
        mode: ``"plane_strain"`` (default) or ``"plane_stress"``.
        K_c: fracture toughness.
    """

    E: float = 1.0
    nu: float = 0.3
    mode: str = PLANE_STRAIN
    K_c: float = 1.0

    def __post_init__(self):
        if not self.E > 0:
            raise PreconditionError(f"E must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise PreconditionError(f"nu out of range (-1, 0.5), got {self.nu}")
        if self.mode not in (PLANE_STRAIN, PLANE_STRESS):
            raise PreconditionError(f"unknown mode {self.mode!r}")
        if not self.K_c > 0:
            raise PreconditionError(f"K_c must be positive, got {self.K_c}")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        """Effective in-plane Lame constant for the selected mode."""
        lam = self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        if self.mode == PLANE_STRESS:
            return 2.0 * self.mu * lam / (lam + 2.0 * self.mu)
        return lam

    @property
    def kappa(self) -> float:
        if self.mode == PLANE_STRAIN:
            return 3.0 - 4.0 * self.nu
        return (3.0 - self.nu) / (1.0 + self.nu)

    @property
    def E_star(self) -> float:
        if self.mode == PLANE_STRAIN:
            return self.E / (1.0 - self.nu ** 2)
        return self.E

    @property
    def D(self) -> np.ndarray:
        """Voigt matrix for (e_xx, e_yy, 2 e_xy) -> (s_xx, s_yy, s_xy)."""
        lam, mu = self.lam, self.mu
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])

    def stress(self, grad: np.ndarray) -> np.ndarray:
        """Stress tensors (..., 2, 2) from displacement gradients (..., 2, 2), ``grad[i, j] = du_i/dx_j``."""
        eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        tr = eps[..., 0, 0] + eps[..., 1, 1]
        return self.lam * tr[..., None, None] * np.eye(2) + 2.0 * self.mu * eps

    def energy_density(self, grad: np.ndarray) -> np.ndarray:
        eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        return 0.5 * np.einsum("...ij,...ij->...", self.stress(grad), eps)


@dataclass
class LoadShapes:
    """Unit load shapes, multiplied by the scale C at assembly time.

    Attributes:
        g_bar: ``f(points (k,2)) -> (k,2)`` boundary displacement.
        t_bar: ``f(points, normals) -> (k,2)`` traction on traction edges.
        b_bar: ``f(points) -> (k,2)`` body force.
        dirichlet: ``f(edge_midpoints (k,2)) -> bool (k,)`` selecting the
            Dirichlet part of the outer boundary; ``None`` means the whole outer
            boundary when ``g_bar`` is given, nothing otherwise. Crack edges are
            always traction edges.
        pins: ``[(point, (fix_x, fix_y)), ...]`` constraints on the node nearest
            to ``point``, set to ``C * g_bar`` there (zero without ``g_bar``).
    """

    g_bar: Callable | None = None
    t_bar: Callable | None = None
    b_bar: Callable | None = None
    dirichlet: Callable | None = None
    pins: list = field(default_factory=list)

    def scaled(self, lam: float) -> "LoadShapes":
        def mul(f):
            if f is None:
                return None
            return lambda *a: lam * np.asarray(f(*a))
        return LoadShapes(mul(self.g_bar), mul(self.t_bar), mul(self.b_bar), self.dirichlet,
                          list(self.pins))


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


class FemMesh:
    """P2 node numbering and boundary bookkeeping for a (possibly split) triangulation.

    Args:
        points: (nv, 2) vertex coordinates.
        triangles: (nt, 3) counterclockwise connectivity.
        crack_edges: vertex pairs lying on crack flanks (either orientation).
        flank: optional per-triangle flank label (+1/-1/0) used for point
            location on the crack line.
    """

    def __init__(self, points, triangles, crack_edges=(), flank=None):
        self.points = np.asarray(points, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        nv = len(self.points)
        adj = build_adjacency(self.triangles, nv)
        self.edges = adj.edges
        self.edge_tris = adj.edge_tris
        te = adj.tri_edges
        self.elements = np.column_stack([self.triangles, nv + te[:, 2], nv + te[:, 0], nv + te[:, 1]])
        self.nodes = np.vstack([self.points, 0.5 * (self.points[self.edges[:, 0]] + self.points[self.edges[:, 1]])])
        self.n_vertices = nv
        self.flank = np.zeros(len(self.triangles), dtype=int) if flank is None else np.asarray(flank)
        crack = {_edge_key(int(a), int(b)) for a, b in crack_edges}
        bnd = adj.boundary_edges
        is_crack = np.array([_edge_key(int(a), int(b)) in crack for a, b in self.edges[bnd]], dtype=bool)
        if len(crack) and is_crack.sum() != len(crack):
            raise PreconditionError("some crack edges are not boundary edges of the mesh")
        self.crack_edge_ids = bnd[is_crack]
        self.outer_edge_ids = bnd[~is_crack]
        areas = signed_areas(self.points, self.triangles)
        if np.any(areas <= 0):
            raise PreconditionError("mesh has inverted or degenerate triangles")
        self.areas = areas

    @classmethod
    def from_conformed(cls, cm) -> "FemMesh":
        crack = np.vstack([cm.crack_edges, cm.crack_edges_negative]) if len(cm.duplicated_pairs) \
            else np.zeros((0, 2), dtype=np.int64)
        return cls(cm.positions, cm.triangles, crack, cm.flank)

    @classmethod
    def from_triangulation(cls, mesh, crack_edges=()) -> "FemMesh":
        return cls(mesh.vertices, mesh.triangles, crack_edges)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @cached_property
    def lambda_gradients(self) -> np.ndarray:
        """(nt, 3, 2) gradients of the barycentric coordinates."""
        p = self.points[self.triangles]
        a = 2.0 * self.areas
        g = np.empty((len(p), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / a
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / a
        return g

    def edge_nodes(self, edge_ids) -> np.ndarray:
        """(k, 3) node ids (end, end, midnode) of edges."""
        e = np.asarray(edge_ids, dtype=np.int64)
        return np.column_stack([self.edges[e], self.n_vertices + e])

    def outward_normals(self, edge_ids) -> np.ndarray:
        e = np.asarray(edge_ids, dtype=np.int64)
        t = self.edge_tris[e, 0]
        a, b = self.points[self.edges[e, 0]], self.points[self.edges[e, 1]]
        d = b - a
        n = np.column_stack([d[:, 1], -d[:, 0]])
        c = self.points[self.triangles[t]].mean(axis=1)
        flip = ((c - a) * n).sum(1) > 0
        n[flip] *= -1
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def _tree(self):
        return cKDTree(self.points[self.triangles].mean(axis=1))

    def locate(self, x, side: int | None = None, k: int = 16):
        """Element containing ``x`` and its barycentric coordinates.

        ``side`` (+1/-1) picks the crack flank when ``x`` lies on a crack edge.

        Raises:
            PreconditionError: if ``x`` is outside the mesh, or on the crack
                line without a flank hint.
        """
        x = np.asarray(x, dtype=float)
        k = min(k, len(self.triangles))
        _, cand = self._tree.query(x, k=k)
        cand = np.atleast_1d(cand)
        p = self.points[self.triangles[cand]]
        lam = _barycentric(p, x)
        tol = 1e-12
        inside = (lam >= -tol).all(axis=1)
        if not inside.any():
            # fall back to a full scan for large or badly graded meshes
            p = self.points[self.triangles]
            lam_all = _barycentric(p, x)
            hits = np.flatnonzero((lam_all >= -tol).all(axis=1))
            if not len(hits):
                raise PreconditionError(f"point {x.tolist()} is outside the mesh")
            cand, lam, inside = hits, lam_all[hits], np.ones(len(hits), dtype=bool)
        hits = cand[inside]
        lam_h = lam[inside]
        fl = self.flank[hits]
        if len(set(fl.tolist()) - {0}) > 1:
            if side is None:
                raise PreconditionError(f"point {x.tolist()} lies on the crack; a flank hint is required")
            want = 1 if side > 0 else -1
            sel = np.flatnonzero(fl == want)
            i = sel[0]
        else:
            i = 0
        return int(hits[i]), lam_h[i]


def _barycentric(p, x):
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    l1 = ((x[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (x[1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
    l2 = ((b[:, 0] - a[:, 0]) * (x[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (x[0] - a[:, 0])) / det
    return np.column_stack([1 - l1 - l2, l1, l2])


def shape_values(lam: np.ndarray) -> np.ndarray:
    """P2 shape functions (..., 6) at barycentric points (..., 3)."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)


def shape_gradients(lam: np.ndarray, glam: np.ndarray) -> np.ndarray:
    """Gradients (nt, 6, 2) of the P2 basis at one barycentric point per element.

    Args:
        lam: (nt, 3) or (3,) barycentric coordinates.
        glam: (nt, 3, 2) barycentric gradients.
    """
    lam = np.broadcast_to(lam, glam.shape[:2])
    g = np.empty((glam.shape[0], 6, 2))
    for i in range(3):
        g[:, i] = (4 * lam[:, i] - 1)[:, None] * glam[:, i]
    for n, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        g[:, 3 + n] = 4 * (lam[:, i, None] * glam[:, j] + lam[:, j, None] * glam[:, i])
    return g


def _b_matrix(G):
    # (nt, 3, 12) strain-displacement matrix, interleaved dofs
    nt = G.shape[0]
    B = np.zeros((nt, 3, 12))
    B[:, 0, 0::2] = G[:, :, 0]
    B[:, 1, 1::2] = G[:, :, 1]
    B[:, 2, 0::2] = G[:, :, 1]
    B[:, 2, 1::2] = G[:, :, 0]
    return B


def element_dofs(elements: np.ndarray) -> np.ndarray:
    d = np.empty((len(elements), 12), dtype=np.int64)
    d[:, 0::2] = 2 * elements
    d[:, 1::2] = 2 * elements + 1
    return d


def _stiffness_chunk(fm: FemMesh, D, idx):
    glam = fm.lambda_gradients[idx]
    Ke = np.zeros((len(idx), 12, 12))
    for q, w in zip(QUAD_BARY, QUAD_W):
        B = _b_matrix(shape_gradients(q, glam))
        Ke += w * np.einsum("eki,kl,elj->eij", B, D, B)
    Ke *= fm.areas[idx, None, None]
    return Ke


def stiffness_matrix(fm: FemMesh, material: Material, threads: int = 1) -> sp.csr_matrix:
    """Global stiffness matrix; ``threads > 1`` splits the element loop into chunks."""
    nt = len(fm.elements)
    D = material.D
    if threads <= 1:
        Ke = _stiffness_chunk(fm, D, np.arange(nt))
    else:
        chunks = np.array_split(np.arange(nt), threads)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            Ke = np.concatenate(list(ex.map(lambda c: _stiffness_chunk(fm, D, c), chunks)))
    dofs = element_dofs(fm.elements)
    rows = np.repeat(dofs, 12, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, 12)).reshape(-1)
    K = sp.coo_matrix((Ke.reshape(-1), (rows, cols)), shape=(fm.n_dofs, fm.n_dofs)).tocsr()
    K.sum_duplicates()
    return K


def body_load(fm: FemMesh, b_bar) -> np.ndarray:
    f = np.zeros(fm.n_dofs)
    if b_bar is None:
        return f
    p = fm.points[fm.triangles]
    for q, w in zip(QUAD_BARY, QUAD_W):
        x = np.einsum("k,ekd->ed", q, p)
        bv = np.asarray(b_bar(x), dtype=float).reshape(-1, 2)
        N = shape_values(q)
        contrib = w * fm.areas[:, None, None] * N[None, :, None] * bv[:, None, :]
        np.add.at(f, element_dofs(fm.elements).reshape(-1, 6, 2), contrib)
    return f


def traction_load(fm: FemMesh, t_bar, edge_ids) -> np.ndarray:
    f = np.zeros(fm.n_dofs)
    if t_bar is None or len(edge_ids) == 0:
        return f
    en = fm.edge_nodes(edge_ids)
    a, b = fm.points[en[:, 0]], fm.points[en[:, 1]]
    L = np.linalg.norm(b - a, axis=1)
    n = fm.outward_normals(edge_ids)
    for t, w in zip(_GL_T, _GL_W):
        x = a + t * (b - a)
        tv = np.asarray(t_bar(x, n), dtype=float).reshape(-1, 2)
        N = np.array([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])
        for k in range(3):
            for c in range(2):
                np.add.at(f, 2 * en[:, k] + c, w * L * N[k] * tv[:, c])
    return f


@dataclass
class LinearSystem:
    """Assembled system with Dirichlet data, before elimination."""

    fem: FemMesh
    material: Material
    K: sp.csr_matrix
    f: np.ndarray
    fixed: np.ndarray
    values: np.ndarray
    C: float

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.fem.n_dofs, dtype=bool)
        mask[self.fixed] = False
        return np.flatnonzero(mask)


def dirichlet_dofs(fm: FemMesh, shapes: LoadShapes, C: float = 1.0):
    """Constrained dof ids and values ``C * g_bar`` (interpolated at nodes)."""
    edges = fm.outer_edge_ids
    if shapes.dirichlet is not None:
        mid = fm.nodes[fm.n_vertices + edges]
        sel = np.asarray(shapes.dirichlet(mid), dtype=bool).reshape(-1)
        edges = edges[sel]
    elif shapes.g_bar is None:
        edges = edges[:0]
    nodes = np.unique(fm.edge_nodes(edges).reshape(-1)) if len(edges) else np.zeros(0, dtype=np.int64)
    g = shapes.g_bar
    vals = C * np.asarray(g(fm.nodes[nodes]), dtype=float).reshape(-1, 2) if (g is not None and len(nodes)) \
        else np.zeros((len(nodes), 2))
    dof_val = {}
    for k, nd in enumerate(nodes):
        dof_val[2 * int(nd)] = vals[k, 0]
        dof_val[2 * int(nd) + 1] = vals[k, 1]
    for point, mask in shapes.pins:
        nd = int(np.argmin(np.linalg.norm(fm.nodes[:fm.n_vertices] - np.asarray(point), axis=1)))
        v = C * np.asarray(g(fm.nodes[[nd]]), dtype=float).reshape(2) if g is not None else np.zeros(2)
        for c in range(2):
            if mask[c]:
                dof_val[2 * nd + c] = v[c]
    fixed = np.array(sorted(dof_val), dtype=np.int64)
    return fixed, np.array([dof_val[d] for d in fixed], dtype=float)


def _check_rigid_modes(fm: FemMesh, fixed):
    # rigid motions (translations, rotation) must not vanish on the fixed dofs
    x = fm.nodes
    R = np.zeros((fm.n_dofs, 3))
    R[0::2, 0] = 1.0
    R[1::2, 1] = 1.0
    c = x.mean(axis=0)
    R[0::2, 2] = -(x[:, 1] - c[1])
    R[1::2, 2] = x[:, 0] - c[0]
    Rd = R[fixed]
    if len(fixed) < 3 or np.linalg.matrix_rank(Rd, tol=1e-10 * max(1.0, np.abs(Rd).max())) < 3:
        raise SolverError("singular system: Dirichlet constraints do not remove all rigid modes")


def assemble(fm: FemMesh, material: Material, shapes: LoadShapes, C: float = 1.0,
             threads: int = 1) -> LinearSystem:
    """Stiffness, load ``C*(b_bar, t_bar)`` and Dirichlet data ``C*g_bar``.

    Crack edges are always traction-free; ``t_bar`` acts on non-Dirichlet
    outer edges only.

    Raises:
        SolverError: if the constraints leave a rigid mode free.
    """
    K = stiffness_matrix(fm, material, threads=threads)
    fixed, values = dirichlet_dofs(fm, shapes, C)
    _check_rigid_modes(fm, fixed)
    f = C * body_load(fm, shapes.b_bar)
    outer = fm.outer_edge_ids
    if shapes.dirichlet is not None:
        mid = fm.nodes[fm.n_vertices + outer]
        trac_edges = outer[~np.asarray(shapes.dirichlet(mid), dtype=bool).reshape(-1)]
    elif shapes.g_bar is None:
        trac_edges = outer
    else:
        trac_edges = outer[:0]
    f += C * traction_load(fm, shapes.t_bar, trac_edges)
    return LinearSystem(fm, material, K, f, fixed, values, C)


@dataclass
class FemSolution:
    """Nodal P2 displacements ``u`` (n_nodes, 2) with the system they solve."""

    fem: FemMesh
    material: Material
    u: np.ndarray
    C: float
    info: SolveInfo
    system: LinearSystem | None = None

    @property
    def n_dofs(self) -> int:
        return self.fem.n_dofs

    def gradients_at(self, lam) -> np.ndarray:
        """(nt, 2, 2) displacement gradients at barycentric point(s) ``lam`` per element."""
        G = shape_gradients(np.asarray(lam, dtype=float), self.fem.lambda_gradients)
        ue = self.u[self.fem.elements]
        return np.einsum("eki,ekj->eij", ue, G)

    def values_at(self, lam) -> np.ndarray:
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (len(self.fem.elements), 3))
        N = shape_values(lam)
        return np.einsum("ek,ekd->ed", N, self.u[self.fem.elements])

    def quadrature(self):
        """Yield ``(points (nt,2), weights (nt,), u (nt,2), grad (nt,2,2))`` per quadrature point."""
        p = self.fem.points[self.fem.triangles]
        for q, w in zip(QUAD_BARY, QUAD_W):
            x = np.einsum("k,ekd->ed", q, p)
            yield x, w * self.fem.areas, self.values_at(q), self.gradients_at(q)

    def evaluate(self, x, side: int | None = None):
        """Displacement (2,), gradient (2,2) and stress (2,2) at a point."""
        t, lam = self.fem.locate(x, side=side)
        N = shape_values(lam)
        ue = self.u[self.fem.elements[t]]
        G = shape_gradients(lam[None, :], self.fem.lambda_gradients[[t]])[0]
        grad = ue.T @ G
        return N @ ue, grad, self.material.stress(grad)

    def strain_energy(self) -> float:
        e = 0.0
        for _, w, _, g in self.quadrature():
            e += float((w * self.material.energy_density(g)).sum())
        return e

    def reactions(self) -> np.ndarray:
        """Nodal reaction vector ``K u - f`` (nonzero only on constrained dofs)."""
        s = self.system
        r = s.K @ self.u.reshape(-1) - s.f
        out = np.zeros_like(r)
        out[s.fixed] = r[s.fixed]
        return out

    def equilibrium_residual(self) -> float:
        """|sum of reactions + applied loads| relative to the load magnitude."""
        s = self.system
        r = self.reactions()
        tot = np.array([r[0::2].sum() + s.f[0::2].sum(), r[1::2].sum() + s.f[1::2].sum()])
        scale = max(np.abs(r).sum() + np.abs(s.f).sum(), 1e-300)
        return float(np.linalg.norm(tot) / scale)


def solve(system: LinearSystem, tol: float = 1e-10, method: str = "pcg",
          maxiter: int | None = None) -> FemSolution:
    """Eliminate Dirichlet dofs and solve the reduced SPD system."""
    n = system.fem.n_dofs
    u = np.zeros(n)
    u[system.fixed] = system.values
    free = system.free
    K = system.K
    Kff = K[free][:, free]
    rhs = system.f[free] - K[free][:, system.fixed] @ system.values
    if len(free):
        uf, info = solve_spd(Kff, rhs, tol=tol, method=method, maxiter=maxiter)
        u[free] = uf
    else:
        info = SolveInfo(0, [0.0], method)
    return FemSolution(system.fem, system.material, u.reshape(-1, 2), system.C, info, system)


def solve_problem(fm: FemMesh, material: Material, shapes: LoadShapes, C: float = 1.0,
                  tol: float = 1e-10, method: str = "pcg", threads: int = 1) -> FemSolution:
    return solve(assemble(fm, material, shapes, C, threads=threads), tol=tol, method=method)


def l2_error(sol: FemSolution, exact_u) -> float:
    err = 0.0
    for x, w, u, _ in sol.quadrature():
        err += float((w * ((u - exact_u(x)) ** 2).sum(1)).sum())
    return err ** 0.5


def energy_error(sol: FemSolution, exact_grad) -> float:
    """sqrt of integral of (eps - eps_ex) : sigma(eps - eps_ex)."""
    err = 0.0
    for x, w, _, g in sol.quadrature():
        d = g - exact_grad(x)
        err += float((w * 2.0 * sol.material.energy_density(d)).sum())
    return err ** 0.5
