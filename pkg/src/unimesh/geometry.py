"""Planar predicates, triangulation storage and element quality.

Triangulations are immutable numpy-backed containers; adjacency tables are
derived lazily and cached.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import MeshError, PreconditionError

# |signed area| below DEGENERATE_TOL * (longest edge)^2 counts as zero
DEGENERATE_TOL = 1e-14
SQRT3 = np.sqrt(3.0)


def orient2d(a, b, c) -> int:
    """Sign of twice the signed area of the triangle (a, b, c).

    Returns +1 for counterclockwise, -1 for clockwise and 0 when the area is
    inside the scale-aware tolerance band.
    """
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    cx, cy = float(c[0]), float(c[1])
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    scale = max((bx - ax) ** 2 + (by - ay) ** 2,
                (cx - bx) ** 2 + (cy - by) ** 2,
                (ax - cx) ** 2 + (ay - cy) ** 2)
    if abs(det) <= DEGENERATE_TOL * scale:
        return 0
    return 1 if det > 0 else -1


def signed_areas(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = points[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def signed_quality(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """4*sqrt(3)*A / sum(l_i^2) with the sign of the area (inverted -> negative)."""
    p = points[triangles]
    l2 = (((p[:, 1] - p[:, 0]) ** 2).sum(1) + ((p[:, 2] - p[:, 1]) ** 2).sum(1)
          + ((p[:, 0] - p[:, 2]) ** 2).sum(1))
    area = signed_areas(points, triangles)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(l2 > 0, 4.0 * SQRT3 * area / l2, 0.0)
    return q


def quality_array(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    return np.clip(signed_quality(points, triangles), 0.0, 1.0)


def triangle_quality(a, b, c) -> float:
    """Shape quality in [0, 1]; 1 for equilateral, 0 for degenerate."""
    pts = np.array([a, b, c], dtype=float)
    q = signed_quality(pts, np.array([[0, 1, 2]]))[0]
    area = abs(signed_areas(pts, np.array([[0, 1, 2]]))[0])
    lmax2 = max(((pts[1] - pts[0]) ** 2).sum(), ((pts[2] - pts[1]) ** 2).sum(),
                ((pts[0] - pts[2]) ** 2).sum())
    if area <= 0.5 * DEGENERATE_TOL * lmax2:
        return 0.0
    return float(min(max(abs(q), 0.0), 1.0))


def is_acute(a, b, c, tol: float = 1e-12) -> bool:
    """True iff all three angles are strictly below 90 degrees.

    Right angles (within ``tol`` relative) are reported as not acute.

    Raises:
        PreconditionError: for a degenerate triangle.
    """
    pts = np.array([a, b, c], dtype=float)
    if orient2d(*pts) == 0:
        raise PreconditionError("is_acute: degenerate triangle")
    for i in range(3):
        u = pts[(i + 1) % 3] - pts[i]
        v = pts[(i + 2) % 3] - pts[i]
        # cos(angle) must be clearly positive
        if np.dot(u, v) <= tol * np.linalg.norm(u) * np.linalg.norm(v):
            return False
    return True


def acute_mask(points: np.ndarray, triangles: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    p = points[triangles]
    ok = np.ones(len(triangles), dtype=bool)
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        dots = (u * v).sum(1)
        ok &= dots > tol * np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
    return ok


@dataclass(frozen=True)
class Adjacency:
    """Edge tables of a triangulation.

    ``edges[e]`` is a sorted vertex pair, ``edge_tris[e]`` the one or two
    incident triangles (-1 pads boundary edges), ``tri_edges[t, i]`` the edge
    opposite local vertex ``i``.
    """

    edges: np.ndarray
    edge_tris: np.ndarray
    tri_edges: np.ndarray

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] >= 0)


def build_adjacency(triangles, n_vertices: int | None = None) -> Adjacency:
    """Derive unique edges and triangle/edge incidence.

    Raises:
        MeshError: for out-of-range indices, repeated vertices, duplicate
            triangles or an edge shared by more than two triangles.
    """
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if n_vertices is not None and len(tris) and (tris.min() < 0 or tris.max() >= n_vertices):
        raise MeshError("triangle vertex index out of range")
    if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
        raise MeshError("triangle with repeated vertex")
    srt = np.sort(tris, axis=1)
    _, counts = np.unique(srt, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise MeshError("duplicate triangle")
    # local edge i is opposite vertex i
    half = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1).reshape(-1, 2)
    key = np.sort(half, axis=1)
    edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        bad = edges[counts > 2][0]
        raise MeshError(f"nonmanifold edge {tuple(int(v) for v in bad)}")
    tri_of_half = np.repeat(np.arange(len(tris)), 3)
    edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    sorted_inv = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_inv[1:] != sorted_inv[:-1]
    edge_tris[sorted_inv[first], 0] = tri_of_half[order[first]]
    edge_tris[sorted_inv[~first], 1] = tri_of_half[order[~first]]
    return Adjacency(edges=edges, edge_tris=edge_tris, tri_edges=inverse.reshape(-1, 3))


class Triangulation:
    """Vertex coordinates plus counterclockwise triangle connectivity.

    Args:
        vertices: (nv, 2) coordinates.
        triangles: (nt, 3) vertex indices, counterclockwise.
        validate: check orientation and manifoldness on construction.
    """

    def __init__(self, vertices, triangles, validate: bool = True):
        v = np.array(vertices, dtype=float).reshape(-1, 2)
        t = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        v.setflags(write=False)
        t.setflags(write=False)
        self.vertices = v
        self.triangles = t
        if validate:
            if not np.all(np.isfinite(v)):
                raise MeshError("non-finite vertex coordinates")
            _ = self.adjacency
            area = signed_areas(v, t)
            scale = self._edge_lengths.max(axis=1) ** 2 if len(t) else np.zeros(0)
            bad = np.flatnonzero(area <= 0.5 * DEGENERATE_TOL * scale)
            if len(bad):
                raise MeshError(f"triangles not counterclockwise: {bad[:10].tolist()}")

    def __repr__(self):
        return f"Triangulation(nv={self.n_vertices}, nt={self.n_triangles})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def adjacency(self) -> Adjacency:
        return build_adjacency(self.triangles, self.n_vertices)

    @property
    def edges(self) -> np.ndarray:
        return self.adjacency.edges

    @cached_property
    def _edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.stack([np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                         np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
                         np.linalg.norm(p[:, 1] - p[:, 0], axis=1)], axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self._edge_lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        adj = self.adjacency
        return np.unique(adj.edges[adj.boundary_edges])

    @cached_property
    def vertex_neighbors(self) -> list[np.ndarray]:
        adj = self.adjacency
        nbrs = [[] for _ in range(self.n_vertices)]
        for a, b in adj.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        return [np.array(sorted(n), dtype=np.int64) for n in nbrs]

    @cached_property
    def vertex_triangles(self) -> list[np.ndarray]:
        vt = [[] for _ in range(self.n_vertices)]
        for t, tri in enumerate(self.triangles):
            for v in tri:
                vt[v].append(t)
        return [np.array(x, dtype=np.int64) for x in vt]

    def quality(self) -> np.ndarray:
        return quality_array(self.vertices, self.triangles)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles


@dataclass(frozen=True)
class QualityReport:
    q: np.ndarray
    min_q: float
    bin_edges: np.ndarray
    counts: np.ndarray

    def format(self) -> str:
        lines = [f"triangles: {len(self.q)}", f"min quality: {self.min_q:.6f}",
                 f"mean quality: {float(self.q.mean()):.6f}"]
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            lines.append(f"  [{lo:.1f}, {hi:.1f}) {int(c)}")
        return "\n".join(lines)


def quality_report(points, triangles, bins: int = 10) -> QualityReport:
    q = quality_array(np.asarray(points, float), np.asarray(triangles))
    counts, edges = np.histogram(q, bins=bins, range=(0.0, 1.0))
    return QualityReport(q=q, min_q=float(q.min()) if len(q) else 1.0,
                         bin_edges=edges, counts=counts)


def _zip_rows(bottom: list[int], top: list[int], xs: np.ndarray) -> list[tuple[int, int, int]]:
    # triangulate the strip between two sorted rows of vertices
    tris = []
    i = k = 0
    while i < len(bottom) - 1 or k < len(top) - 1:
        if i == len(bottom) - 1:
            advance_top = True
        elif k == len(top) - 1:
            advance_top = False
        else:
            advance_top = xs[top[k]] + xs[top[k + 1]] < xs[bottom[i]] + xs[bottom[i + 1]]
        if advance_top:
            tris.append((bottom[i], top[k + 1], top[k]))
            k += 1
        else:
            tris.append((bottom[i], bottom[i + 1], top[k]))
            i += 1
    return tris


def structured_acute_mesh(bbox, n: int) -> Triangulation:
    """Near-equilateral lattice over a rectangle.

    ``n`` is the number of lattice columns along x; the row count is chosen
    so rows are about ``sqrt(3)/2`` column widths apart. Odd rows are
    shifted by half a column and closed by boundary vertices, so every
    triangle not touching the left/right sides is an acute isosceles
    triangle, while the side-closing triangles are right triangles.

    Args:
        bbox: (xmin, ymin, xmax, ymax).
        n: number of columns, >= 1.
    """
    xmin, ymin, xmax, ymax = map(float, bbox)
    if n < 1:
        raise PreconditionError("structured_acute_mesh: n must be >= 1")
    width, height = xmax - xmin, ymax - ymin
    if not (width > 0 and height > 0):
        raise PreconditionError("structured_acute_mesh: degenerate bounding box")
    w = width / n
    ny = max(1, int(round(height / (w * SQRT3 / 2))))
    hy = height / ny
    if hy <= 0.5 * w * (1 + 1e-9):
        raise PreconditionError("structured_acute_mesh: bounding box too flat for an acute lattice")
    xs, ys, rows = [], [], []
    for j in range(ny + 1):
        y = ymax if j == ny else ymin + j * hy
        if j % 2 == 0:
            rx = [xmin + i * w for i in range(n)] + [xmax]
        else:
            rx = [xmin] + [xmin + (i + 0.5) * w for i in range(n)] + [xmax]
        row = list(range(len(xs), len(xs) + len(rx)))
        xs.extend(rx)
        ys.extend([y] * len(rx))
        rows.append(row)
    xs_arr = np.array(xs)
    tris = []
    for j in range(ny):
        tris.extend(_zip_rows(rows[j], rows[j + 1], xs_arr))
    return Triangulation(np.column_stack([xs_arr, ys]), tris)


def refine_uniform(mesh: Triangulation) -> Triangulation:
    """Split every triangle into four similar children through edge midpoints."""
    adj = mesh.adjacency
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[adj.edges[:, 0]] + mesh.vertices[adj.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    t = mesh.triangles
    m = nv + adj.tri_edges  # m[:, i] is the midpoint opposite local vertex i
    m12, m20, m01 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([m01, t[:, 1], m12]),
        np.column_stack([m20, m12, t[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    return Triangulation(verts, children)


def refine_graded(mesh: Triangulation, size_fn, max_passes: int = 30) -> Triangulation:
    """Local red refinement until every element diameter is below ``size_fn``.

    Refinement is red (4 similar children) with a 2:1 balance; remaining
    single hanging nodes are closed by green bisection at the very end, so
    green elements are never refined further.

    Args:
        mesh: background triangulation.
        size_fn: vectorized callable mapping (k, 2) centroids to target sizes.
        max_passes: cap on refinement sweeps.
    """
    verts = [tuple(p) for p in mesh.vertices]
    leaves = {i: tuple(int(v) for v in tri) for i, tri in enumerate(mesh.triangles)}
    next_id = len(leaves)
    mid: dict[tuple[int, int], int] = {}

    def key(a, b):
        return (a, b) if a < b else (b, a)

    def midpoint(a, b):
        k = key(a, b)
        if k not in mid:
            pa, pb = verts[a], verts[b]
            mid[k] = len(verts)
            verts.append((0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])))
        return mid[k]

    def split(lid):
        nonlocal next_id
        a, b, c = leaves.pop(lid)
        mab, mbc, mca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new = [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]
        ids = []
        for tri in new:
            leaves[next_id] = tri
            ids.append(next_id)
            next_id += 1
        return ids

    # vertex -> leaves touching it, used to find neighbours needing closure
    def needs_red(tri):
        a, b, c = tri
        hanging = 0
        for u, v in ((a, b), (b, c), (c, a)):
            m = mid.get(key(u, v))
            if m is not None:
                hanging += 1
                if key(u, m) in mid or key(m, v) in mid:
                    return True
        return hanging >= 2

    for _ in range(max_passes):
        ids = np.array(sorted(leaves))
        pts = np.asarray(verts)
        tri_arr = np.array([leaves[i] for i in ids])
        p = pts[tri_arr]
        cents = p.mean(axis=1)
        diam = np.max(np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                                np.linalg.norm(p[:, 0] - p[:, 2], axis=1)]), axis=0)
        target = np.asarray(size_fn(cents), dtype=float)
        marked = ids[diam > target * (1 + 1e-9)]
        if len(marked) == 0:
            break
        for lid in marked:
            split(int(lid))
        changed = True
        while changed:
            changed = False
            for lid in sorted(leaves):
                if lid in leaves and needs_red(leaves[lid]):
                    split(lid)
                    changed = True
    out = []
    for lid in sorted(leaves):
        a, b, c = leaves[lid]
        done = False
        for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
            m = mid.get(key(u, v))
            if m is not None:
                out.append((u, m, w))
                out.append((m, v, w))
                done = True
                break
        if not done:
            out.append((a, b, c))
    return Triangulation(np.asarray(verts), out)


def write_mesh(mesh: Triangulation, path) -> None:
    """Write the plain-text mesh format (``nv nt``, coordinates, 0-based triangles)."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def _data_lines(path):
    for raw in Path(path).read_text().splitlines():
        s = raw.strip()
        if s and not s.startswith("#"):
            yield s


def read_mesh(path, validate: bool = True) -> Triangulation:
    lines = list(_data_lines(path))
    if not lines:
        raise MeshError(f"{path}: empty mesh file")
    try:
        nv, nt = (int(tok) for tok in lines[0].split())
        coords = [tuple(float(tok) for tok in ln.split()) for ln in lines[1:1 + nv]]
        tris = [tuple(int(tok) for tok in ln.split()) for ln in lines[1 + nv:1 + nv + nt]]
    except ValueError as exc:
        raise MeshError(f"{path}: malformed mesh file ({exc})") from exc
    if len(coords) != nv or len(tris) != nt or any(len(c) != 2 for c in coords) \
            or any(len(t) != 3 for t in tris):
        raise MeshError(f"{path}: truncated or malformed mesh file")
    return Triangulation(np.array(coords).reshape(-1, 2), np.array(tris).reshape(-1, 3), validate=validate)
