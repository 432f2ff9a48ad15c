"""Deform a background triangulation so that a curve becomes a union of edges.

The pipeline is ``classify`` -> ``select_gamma_h`` -> projection and tip
snapping -> ``relax``, wrapped by ``conform``; ``split_crack`` then duplicates
the interior crack vertices so the two crack flanks are disconnected.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConformationError, PreconditionError, RefinementNeededError
from .geometry import Triangulation, acute_mask, signed_quality, write_mesh

NOT_CUT, POSITIVELY_CUT, NEGATIVELY_CUT, TOUCHING = 0, 1, 2, 3


@dataclass(frozen=True)
class ConformParams:
    """Tunables of the conforming algorithm.

    band_factor scales the local mesh size into the classification band,
    curvature_factor is the required ratio of the curve's minimum radius of
    curvature to the local mesh size.
    """

    q_min: float = 0.2
    band_factor: float = 3.0
    rings: int = 2
    relax_iterations: int = 20
    relax_tol: float = 1e-3
    curvature_factor: float = 2.0
    backtrack: int = 4
    tip_gap_factor: float = 0.35
    pattern_search: bool = True
    pattern_below: float = 0.5


@dataclass(frozen=True)
class CutClassification:
    vertex_side: np.ndarray
    vertex_far: np.ndarray
    s: np.ndarray
    distance: np.ndarray
    projection: np.ndarray
    tri_cut: np.ndarray

    @property
    def positively_cut(self) -> np.ndarray:
        return np.flatnonzero(self.tri_cut == POSITIVELY_CUT)


@dataclass(frozen=True)
class GammaH:
    """Ordered chain of positive edges; ``vertices[0]``/``[-1]`` are the tip vertices."""

    vertices: np.ndarray
    source_triangles: dict
    closed: bool
    tip_vertices: tuple

    @property
    def edges(self) -> np.ndarray:
        v = self.vertices
        if self.closed:
            return np.column_stack([v, np.roll(v, -1)])
        return np.column_stack([v[:-1], v[1:]])

    @property
    def interior_vertices(self) -> np.ndarray:
        return self.vertices if self.closed else self.vertices[1:-1]


@dataclass
class ConformedMesh:
    """A perturbed copy of the universal mesh conforming to a curve.

    ``triangles`` references ``positions``; after ``split_crack`` clones are
    appended to ``positions`` and ``duplicated_pairs`` lists (original, clone).
    ``flank`` is +1/-1 for triangles touching an interior crack vertex on the
    positive/negative side, 0 elsewhere.
    """

    base: Triangulation
    positions: np.ndarray
    triangles: np.ndarray
    gamma: GammaH
    curve: object
    tip_vertex_ids: tuple
    duplicated_pairs: list = field(default_factory=list)
    flank: np.ndarray | None = None
    h_local: float = 0.0

    @cached_property
    def mesh(self) -> Triangulation:
        return Triangulation(self.positions, self.triangles)

    def quality(self) -> np.ndarray:
        return np.clip(signed_quality(self.positions, self.triangles), 0.0, 1.0)

    @property
    def min_quality(self) -> float:
        return float(self.quality().min())

    @property
    def crack_edges(self) -> np.ndarray:
        """Crack edges on the positive flank (original vertex ids)."""
        return self.gamma.edges

    @property
    def crack_edges_negative(self) -> np.ndarray:
        clone = dict(self.duplicated_pairs)
        e = self.gamma.edges
        return np.array([[clone.get(int(a), int(a)), clone.get(int(b), int(b))] for a, b in e],
                        dtype=np.int64).reshape(-1, 2)

    def boundary_deviation(self) -> float:
        """Max distance of the conformed curve vertices to the curve."""
        v = self.gamma.vertices
        return float(self.curve.closest_point(self.positions[v]).distance.max())

    def write(self, mesh_path, sidecar_path) -> None:
        write_mesh(Triangulation(self.positions, self.triangles, validate=False), mesh_path)
        side = {
            "crack_edges": self.crack_edges.tolist(),
            "crack_edges_negative": self.crack_edges_negative.tolist(),
            "tip_vertex_ids": [int(t) for t in self.tip_vertex_ids],
            "duplicated_pairs": [[int(a), int(b)] for a, b in self.duplicated_pairs],
            "closed": bool(self.gamma.closed),
        }
        Path(sidecar_path).write_text(json.dumps(side, indent=1) + "\n")


def read_sidecar(path) -> dict:
    return json.loads(Path(path).read_text())


def classify(mesh: Triangulation, curve, band: float | None = None) -> CutClassification:
    """Side of every vertex and cut status of every triangle.

    On-curve vertices (side 0) are treated as positive when classifying
    triangles.
    """
    proj = curve.closest_point(mesh.vertices)
    side = np.asarray(proj.side, dtype=int)
    dist = np.asarray(proj.distance)
    if band is None:
        band = 3.0 * mesh.h_max
    sgn = np.where(side >= 0, 1, -1)
    tsum = sgn[mesh.triangles].sum(axis=1)
    tri_cut = np.full(mesh.n_triangles, NOT_CUT, dtype=int)
    tri_cut[tsum == 1] = POSITIVELY_CUT
    tri_cut[tsum == -1] = NEGATIVELY_CUT
    touching = (side[mesh.triangles] == 0).any(axis=1) & (tri_cut == NOT_CUT)
    tri_cut[touching] = TOUCHING
    return CutClassification(vertex_side=side, vertex_far=dist > band, s=np.asarray(proj.s_star),
                             distance=dist, projection=np.asarray(proj.point), tri_cut=tri_cut)


def _positive_edge(tri, sgn):
    neg = [i for i in range(3) if sgn[tri[i]] < 0]
    i = neg[0]
    return tri[(i + 1) % 3], tri[(i + 2) % 3]


def _chain(edges):
    """Order an edge set into a single simple path or cycle."""
    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    for v, nb in adj.items():
        if len(nb) > 2:
            raise RefinementNeededError(f"Gamma_h branches at vertex {v}; refine the background mesh")
    ends = sorted(v for v, nb in adj.items() if len(nb) == 1)
    closed = not ends
    start = min(adj) if closed else ends[0]
    order, prev, cur = [start], None, start
    while True:
        nxt = [w for w in adj[cur] if w != prev]
        if not nxt or (closed and nxt[0] == start):
            break
        if closed and len(nxt) > 1:
            nxt = [min(nxt)] if prev is None else nxt
        prev, cur = cur, nxt[0]
        order.append(cur)
    if len(order) != len(adj):
        raise RefinementNeededError("Gamma_h is disconnected; refine the background mesh")
    return order, closed


def select_gamma_h(mesh: Triangulation, cls: CutClassification, curve, points=None,
                   tip_gap: float = 0.0) -> GammaH:
    """Collect positive edges of positively cut triangles and chain them.

    For an open curve the chain is trimmed at the vertices nearest to the two
    crack tips (``points``, defaulting to the curve end points). If the
    neighbour of a tip vertex projects closer to the tip (in arc length) than
    ``tip_gap`` times their edge length, that neighbour becomes the tip vertex.

    Raises:
        PreconditionError: if a contributing positively cut triangle is not acute.
        RefinementNeededError: if the chain branches, is disconnected or
            cannot be made free of triangles with three chain vertices.
    """
    sgn = np.where(cls.vertex_side >= 0, 1, -1)
    pcut = cls.positively_cut
    if not curve.closed:
        L = curve.length
        inside = (cls.s > 0.0) & (cls.s < L)
        pcut = pcut[inside[mesh.triangles[pcut]].any(axis=1)]
    if len(pcut) == 0:
        raise RefinementNeededError("no positively cut triangles near the curve")
    acute = acute_mask(mesh.vertices, mesh.triangles[pcut])
    if not acute.all():
        bad = pcut[~acute]
        raise PreconditionError(f"positively cut triangle {int(bad[0])} is not acute "
                                f"({len(bad)} such triangles)")
    src = {}
    for t in pcut:
        a, b = _positive_edge(mesh.triangles[t], sgn)
        src.setdefault((min(a, b), max(a, b)), int(t))
    order, closed = _chain(sorted(src))
    if closed != bool(curve.closed):
        raise RefinementNeededError("Gamma_h topology does not match the curve; refine the mesh")
    order = np.array(order, dtype=np.int64)
    if closed:
        # orient so the positive side is on the left, start at the lowest id
        s = cls.s[order]
        ds = np.mod(np.diff(np.append(s, s[0])), curve.length)
        if np.median(ds) > 0.5 * curve.length:
            order = order[::-1]
        order = np.roll(order, -int(np.argmin(order)))
        tips = ()
    else:
        if cls.s[order[0]] > cls.s[order[-1]]:
            order = order[::-1]
        if points is None:
            points = (curve.eval(0.0), curve.eval(curve.length))
        pos = mesh.vertices[order]
        picks = []
        for p in points:
            d = np.linalg.norm(pos - np.asarray(p), axis=1)
            near = np.flatnonzero(d == d.min())
            picks.append(int(near[np.argmin(order[near])]))
        i0, i1 = picks
        if i0 >= i1:
            raise RefinementNeededError("crack shorter than the local mesh size; refine the mesh")
        order = order[i0:i1 + 1]
        # vertices behind the chosen tip vertex that already project onto the
        # curve end would collapse onto the tip; cut the chain there instead
        s = cls.s[order]
        eps = 1e-12 * curve.length
        at_end = np.flatnonzero(s[:-1] >= curve.length - eps)
        if len(at_end):
            order = order[:at_end[0] + 1]
        s = cls.s[order]
        at_start = np.flatnonzero(s[1:] <= eps)
        if len(at_start):
            order = order[at_start[-1] + 1:]
        x = mesh.vertices

        def edge_len(i, j):
            return float(np.linalg.norm(x[order[i]] - x[order[j]]))

        while len(order) > 2 and curve.length - cls.s[order[-2]] < tip_gap * edge_len(-1, -2):
            order = order[:-1]
        while len(order) > 2 and cls.s[order[1]] < tip_gap * edge_len(0, 1):
            order = order[1:]
        if len(order) < 2:
            raise RefinementNeededError("crack shorter than the local mesh size; refine the mesh")
        tips = (int(order[0]), int(order[-1]))
    order = _remove_three_node_triangles(mesh, order, closed)
    return GammaH(vertices=order, source_triangles=src, closed=closed,
                  tip_vertices=tips if closed else (int(order[0]), int(order[-1])))


def _remove_three_node_triangles(mesh, order, closed):
    # a triangle with three chain vertices would flatten under projection;
    # short-cut the chain through its third edge
    for _ in range(len(order)):
        pos = {int(v): i for i, v in enumerate(order)}
        on = np.isin(mesh.triangles, order).all(axis=1)
        if not on.any():
            return order
        t = np.flatnonzero(on)[0]
        idx = sorted(pos[int(v)] for v in mesh.triangles[t])
        n = len(order)
        if idx[2] - idx[0] == 2:
            drop = idx[1]
        elif closed and idx == [0, 1, n - 1]:
            drop = 0
        elif closed and idx == [0, n - 2, n - 1]:
            drop = n - 1
        else:
            raise RefinementNeededError(f"triangle {int(t)} has three non-consecutive Gamma_h vertices")
        if not closed and drop in (0, n - 1):
            raise RefinementNeededError(f"triangle {int(t)} would remove a tip vertex")
        order = np.delete(order, drop)
    raise RefinementNeededError("could not remove triangles with three Gamma_h vertices")


def _ring_vertices(mesh: Triangulation, seeds, rings: int) -> set:
    nbrs = mesh.vertex_neighbors
    seen = set(int(v) for v in seeds)
    front = set(seen)
    for _ in range(rings):
        nxt = set()
        for v in front:
            nxt.update(int(w) for w in nbrs[v])
        nxt -= seen
        seen |= nxt
        front = nxt
    return seen


def _fan_quality(pos, fan):
    # minimum signed quality of a small fan of triangles
    qmin = np.inf
    for a, b, c in fan:
        ax, ay = pos[a]
        bx, by = pos[b]
        cx, cy = pos[c]
        area = 0.5 * ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))
        l2 = (bx - ax) ** 2 + (by - ay) ** 2 + (cx - bx) ** 2 + (cy - by) ** 2 \
            + (ax - cx) ** 2 + (ay - cy) ** 2
        q = 6.928203230275509 * area / l2 if l2 > 0 else 0.0
        qmin = min(qmin, q)
    return qmin


_DIRS = [(np.cos(a), np.sin(a)) for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)]


def _pattern_move(pl, v, fan, q_old, h):
    # compass search on the fan's min quality; only strict improvements move
    ox, oy = pl[v]
    best, bx, by = q_old, ox, oy
    step = 0.25 * h
    for _ in range(6):
        improved = False
        cx, cy = bx, by
        for dx, dy in _DIRS:
            pl[v] = [cx + step * dx, cy + step * dy]
            q = _fan_quality(pl, fan)
            if q > best + 1e-12:
                best, bx, by, improved = q, pl[v][0], pl[v][1], True
        if not improved:
            step *= 0.5
    pl[v] = [bx, by]
    return ((bx - ox) ** 2 + (by - oy) ** 2) ** 0.5


def relax(positions, mesh: Triangulation, movable, params: ConformParams = ConformParams(),
          h_local: float | None = None):
    """Quality-guarded Laplacian smoothing of the ``movable`` vertices.

    Each vertex, in ascending index order, is proposed at the average of its
    neighbours; the move is kept only if the minimum (signed) quality of its
    incident triangles does not decrease. A rejected proposal is retried at
    half the step up to ``params.backtrack`` times; if all fail, a compass
    search that strictly increases the fan's minimum quality is tried on
    fans below ``params.pattern_below``.

    Returns:
        New (nv, 2) position array; the input is not modified.
    """
    pos = np.array(positions, dtype=float)
    pl = pos.tolist()
    movable = sorted(int(v) for v in movable)
    if h_local is None:
        h_local = mesh.h_max
    fans = {v: [tuple(int(i) for i in mesh.triangles[t]) for t in mesh.vertex_triangles[v]]
            for v in movable}
    nbrs = {v: mesh.vertex_neighbors[v].tolist() for v in movable}
    for _ in range(params.relax_iterations):
        max_disp = 0.0
        for v in movable:
            fan = fans[v]
            q_old = _fan_quality(pl, fan)
            nb = nbrs[v]
            tx = sum(pl[w][0] for w in nb) / len(nb)
            ty = sum(pl[w][1] for w in nb) / len(nb)
            ox, oy = pl[v]
            dx, dy = tx - ox, ty - oy
            for _k in range(params.backtrack + 1):
                pl[v] = [ox + dx, oy + dy]
                if _fan_quality(pl, fan) >= q_old:
                    max_disp = max(max_disp, (dx * dx + dy * dy) ** 0.5)
                    break
                dx, dy = 0.5 * dx, 0.5 * dy
            else:
                pl[v] = [ox, oy]
                if params.pattern_search and q_old < params.pattern_below:
                    max_disp = max(max_disp, _pattern_move(pl, v, fan, q_old, h_local))
        if max_disp < params.relax_tol * h_local:
            break
    return np.array(pl, dtype=float).reshape(-1, 2)


def local_mesh_size(mesh: Triangulation, cls: CutClassification, curve=None) -> float:
    """Largest diameter of cut triangles that straddle the curve itself.

    For open curves triangles cut only by the extension beyond a tip (all
    vertices projecting onto an end point) are ignored.
    """
    cut = (cls.tri_cut == POSITIVELY_CUT) | (cls.tri_cut == NEGATIVELY_CUT)
    if curve is not None and not curve.closed:
        inside = (cls.s > 0.0) & (cls.s < curve.length)
        cut &= inside[mesh.triangles].any(axis=1)
    if not cut.any():
        return mesh.h_max
    return float(mesh.diameters[cut].max())


def conform(mesh: Triangulation, curve, params: ConformParams = ConformParams(),
            tips=None) -> ConformedMesh:
    """Conform ``mesh`` to ``curve`` without modifying ``mesh``.

    Args:
        mesh: the universal (background) mesh.
        curve: ``Spline``/``Polyline``; open curves are cracks with tips at
            their end points unless ``tips`` is given.
        params: algorithm parameters.

    Raises:
        RefinementNeededError: curvature or topology preconditions fail.
        PreconditionError: non-acute positively cut triangle.
        ConformationError: inverted or low-quality elements after relaxation.
    """
    cls0 = classify(mesh, curve, band=np.inf)
    h_local = local_mesh_size(mesh, cls0, curve)
    band = params.band_factor * h_local
    cls = CutClassification(cls0.vertex_side, cls0.distance > band, cls0.s, cls0.distance,
                            cls0.projection, cls0.tri_cut)
    r_curv = curve.min_radius_of_curvature()
    if r_curv < params.curvature_factor * h_local:
        raise RefinementNeededError(
            f"curve radius of curvature {r_curv:.4g} is below the bound "
            f"{params.curvature_factor:g} * h_local = {params.curvature_factor * h_local:.4g}")
    if not curve.closed:
        if tips is None:
            tips = (curve.eval(0.0), curve.eval(curve.length))
        tips = tuple(np.asarray(t, dtype=float) for t in tips)
    gamma = select_gamma_h(mesh, cls, curve, points=tips,
                           tip_gap=params.tip_gap_factor)
    pos = mesh.vertices.copy()
    if gamma.closed:
        pos[gamma.vertices] = cls.projection[gamma.vertices]
        s_chain = cls.s[gamma.vertices]
        tip_ids = ()
    else:
        inner = gamma.vertices[1:-1]
        pos[inner] = cls.projection[inner]
        pos[gamma.vertices[0]] = tips[0]
        pos[gamma.vertices[-1]] = tips[1]
        s_chain = np.concatenate([[0.0], cls.s[inner], [curve.length]])
        tip_ids = (int(gamma.vertices[0]), int(gamma.vertices[-1]))
        if np.any(np.diff(s_chain) <= 0):
            raise ConformationError("projected Gamma_h vertices are not ordered along the curve")
    fixed = set(int(v) for v in gamma.vertices) | set(int(v) for v in mesh.boundary_vertices)
    movable = _ring_vertices(mesh, gamma.vertices, params.rings) - fixed
    pos = relax(pos, mesh, movable, params, h_local=h_local)
    q = signed_quality(pos, mesh.triangles)
    inverted = np.flatnonzero(q <= 0)
    if len(inverted):
        raise ConformationError(f"{len(inverted)} inverted triangles after relaxation", inverted)
    low = np.flatnonzero(q < params.q_min)
    if len(low):
        raise ConformationError(
            f"min quality {q.min():.4f} below q_min={params.q_min} in {len(low)} triangles", low)
    return ConformedMesh(base=mesh, positions=pos, triangles=mesh.triangles.copy(), gamma=gamma,
                         curve=curve, tip_vertex_ids=tip_ids, h_local=h_local,
                         flank=np.zeros(mesh.n_triangles, dtype=int))


def interior_mesh(conformed: ConformedMesh) -> Triangulation:
    """Triangles on the positive side of a closed conforming curve."""
    if not conformed.gamma.closed:
        raise PreconditionError("interior_mesh needs a closed curve")
    cent = conformed.positions[conformed.triangles].mean(axis=1)
    side = np.asarray(conformed.curve.closest_point(cent).side)
    keep = conformed.triangles[side > 0]
    used = np.unique(keep)
    remap = -np.ones(len(conformed.positions), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Triangulation(conformed.positions[used], remap[keep])


def split_crack(conformed: ConformedMesh) -> ConformedMesh:
    """Duplicate interior crack vertices so the flanks become separate boundaries.

    For each interior crack vertex the triangle fan is split by its two crack
    edges; the fan half on the negative (right) side is re-indexed to a clone.

    Raises:
        ConformationError: if a fan cannot be separated by its crack edges.
    """
    gamma = conformed.gamma
    if gamma.closed:
        raise PreconditionError("split_crack needs an open crack")
    tris = conformed.triangles.copy()
    chain = gamma.vertices
    vt = conformed.base.vertex_triangles
    nv = len(conformed.positions)
    pairs = []
    flank = np.zeros(len(tris), dtype=int)
    neg_groups = {}
    for k in range(1, len(chain) - 1):
        v, prev, nxt = int(chain[k]), int(chain[k - 1]), int(chain[k + 1])
        fan = [int(t) for t in vt[v]]
        crack = {prev, nxt}

        def left_of(a, b):
            for t in fan:
                tri = [int(i) for i in conformed.triangles[t]]
                if a not in tri:
                    continue
                i = tri.index(a)
                if tri[(i + 1) % 3] == b:
                    return t
            raise ConformationError(f"crack edge ({a},{b}) has no incident triangle on its left")

        start = left_of(v, nxt)
        right_start = left_of(nxt, v)
        group = {start}
        stack = [start]
        while stack:
            t = stack.pop()
            for w in conformed.triangles[t]:
                w = int(w)
                if w == v or w in crack:
                    continue
                for u in fan:
                    if u not in group and w in conformed.triangles[u]:
                        group.add(u)
                        stack.append(u)
        if right_start in group:
            raise ConformationError(f"flood fill crossed the crack at vertex {v}", [right_start])
        negative = [t for t in fan if t not in group]
        if not negative or left_of(v, prev) not in negative:
            raise ConformationError(f"crack fan at vertex {v} is not separated by its crack edges")
        clone = nv + len(pairs)
        pairs.append((v, clone))
        neg_groups[v] = (clone, negative)
        for t in group:
            flank[t] = 1
        for t in negative:
            flank[t] = -1
    for v, (clone, negative) in neg_groups.items():
        for t in negative:
            tris[t][tris[t] == v] = clone
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    positions = np.vstack([conformed.positions, conformed.positions[src]]) if len(pairs) \
        else conformed.positions.copy()
    return ConformedMesh(base=conformed.base, positions=positions, triangles=tris, gamma=gamma,
                         curve=conformed.curve, tip_vertex_ids=conformed.tip_vertex_ids,
                         duplicated_pairs=pairs, flank=flank, h_local=conformed.h_local)
