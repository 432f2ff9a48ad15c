"""Oriented planar curves, closest point projection and the discrete crack path.

Curves are parametrized by cumulative chord length of their knots. The left
normal (tangent rotated by +90 degrees) defines the positive side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.interpolate import CubicSpline

from .errors import PreconditionError, RefinementNeededError

SEED_SAMPLES = 32
_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class Projection:
    """Closest point of a curve to a query point (arrays for batched queries)."""

    s_star: np.ndarray
    point: np.ndarray
    distance: np.ndarray
    side: np.ndarray


def _rot90(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


class _Curve:
    """Shared projection machinery; subclasses provide eval/derivatives."""

    closed: bool
    knots: np.ndarray
    params: np.ndarray

    @property
    def length(self) -> float:
        return float(self.params[-1])

    @property
    def n_segments(self) -> int:
        return len(self.params) - 1

    def _clamp(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.mod(s, self.length)
        return np.clip(s, 0.0, self.length)

    def tangent(self, s) -> np.ndarray:
        d = self.derivative(s)
        nrm = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(nrm <= 1e-14 * max(self.length, 1.0)):
            raise PreconditionError("curve derivative vanishes")
        return d / nrm

    def normal(self, s) -> np.ndarray:
        return _rot90(self.tangent(s))

    def sample(self, per_segment: int = SEED_SAMPLES):
        """Dense parameter grid including all knots."""
        n = self.n_segments
        t = np.linspace(0.0, 1.0, per_segment, endpoint=False)
        s = (self.params[:-1, None] + np.diff(self.params)[:, None] * t[None, :]).reshape(-1)
        if not self.closed:
            s = np.append(s, self.length)
        return s, self.eval(s)

    def _side(self, x, point, s):
        nrm = self._side_normal(s)
        d = ((x - point) * nrm).sum(-1)
        dist = np.linalg.norm(x - point, axis=-1)
        side = np.sign(d).astype(int)
        side[dist < 1e-12 * self.length] = 0
        return side

    def _side_normal(self, s):
        return self.normal(s)

    def closest_point(self, x) -> Projection:
        """Global closest point for one point (shape (2,)) or a batch (k, 2)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        s_star = self._project(xs)
        pt = self.eval(s_star)
        dist = np.linalg.norm(xs - pt, axis=1)
        side = self._side(xs, pt, s_star)
        if single:
            return Projection(float(s_star[0]), pt[0], float(dist[0]), int(side[0]))
        return Projection(s_star, pt, dist, side)


class Spline(_Curve):
    """Chord-length parametrized interpolating cubic spline.

    Open curves use natural end conditions, closed curves periodic ones.

    Args:
        points: ordered knots; for closed curves do not repeat the first knot.
        closed: periodic closure.
    """

    def __init__(self, points, closed: bool = False):
        pts = np.array(points, dtype=float).reshape(-1, 2)
        if len(pts) < (3 if closed else 2):
            raise PreconditionError("fit_spline: too few points")
        if not np.all(np.isfinite(pts)):
            raise PreconditionError("fit_spline: non-finite knot")
        allp = np.vstack([pts, pts[:1]]) if closed else pts
        seg = np.linalg.norm(np.diff(allp, axis=0), axis=1)
        scale = max(np.ptp(allp, axis=0).max(), 1e-300)
        if np.any(seg <= 1e-14 * scale):
            raise PreconditionError("fit_spline: repeated consecutive points")
        self.closed = closed
        self.knots = pts
        self.params = np.concatenate([[0.0], np.cumsum(seg)])
        if len(allp) == 2:
            # two knots: the natural spline is the straight segment
            self._cs = CubicSpline(self.params, allp, bc_type="natural")
        else:
            self._cs = CubicSpline(self.params, allp, bc_type="periodic" if closed else "natural")
        self._d1 = self._cs.derivative(1)
        self._d2 = self._cs.derivative(2)

    @property
    def coefficients(self) -> np.ndarray:
        """(4, n_segments, 2) polynomial coefficients, highest power first."""
        return self._cs.c

    def eval(self, s) -> np.ndarray:
        return self._cs(self._clamp(s))

    def derivative(self, s) -> np.ndarray:
        return self._d1(self._clamp(s))

    def second_derivative(self, s) -> np.ndarray:
        return self._d2(self._clamp(s))

    def curvature(self, s) -> np.ndarray:
        d1 = self.derivative(s)
        d2 = self.second_derivative(s)
        num = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return num / np.linalg.norm(d1, axis=-1) ** 3

    def min_radius_of_curvature(self, per_segment: int = 64) -> float:
        s, _ = self.sample(per_segment)
        k = np.abs(self.curvature(s)).max()
        return np.inf if k == 0 else 1.0 / k

    def reversed(self) -> "Spline":
        pts = self.knots[::-1]
        if self.closed:
            pts = np.roll(pts, 1, axis=0)
        return Spline(pts, closed=self.closed)

    def _project(self, xs: np.ndarray) -> np.ndarray:
        s_grid, p_grid = self.sample(SEED_SAMPLES)
        out = np.empty(len(xs))
        chunk = max(1, 2_000_000 // max(len(s_grid), 1))
        for lo in range(0, len(xs), chunk):
            xc = xs[lo:lo + chunk]
            d2 = ((xc[:, None, :] - p_grid[None, :, :]) ** 2).sum(-1)
            j = d2.argmin(axis=1)
            out[lo:lo + chunk] = self._refine(xc, s_grid, j, d2[np.arange(len(xc)), j])
        return out

    def _bracket(self, s_grid, j):
        m = len(s_grid)
        if self.closed:
            step = self.length / m
            return s_grid[j] - step, s_grid[j] + step
        lo = s_grid[np.maximum(j - 1, 0)]
        hi = s_grid[np.minimum(j + 1, m - 1)]
        return lo, hi

    def _refine(self, x, s_grid, j, d2best):
        # safeguarded Newton on g(s) = (C(s) - x) . C'(s), bracketed by the
        # neighbouring seed samples
        lo, hi = self._bracket(s_grid, j)
        s = s_grid[j].copy()
        active = np.ones(len(s), dtype=bool)
        tol = 1e-15 * max(self.length, 1.0)
        for _ in range(60):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            sa = s[idx]
            sc = self._clamp(sa)
            c = self._cs(sc) - x[idx]
            d1 = self._d1(sc)
            g = (c * d1).sum(1)
            gp = (d1 * d1).sum(1) + (c * self._d2(sc)).sum(1)
            lo[idx] = np.where(g <= 0, sa, lo[idx])
            hi[idx] = np.where(g > 0, sa, hi[idx])
            with np.errstate(divide="ignore", invalid="ignore"):
                new = sa - g / gp
            bad = ~np.isfinite(new) | (gp <= 0) | (new <= lo[idx]) | (new >= hi[idx])
            new = np.where(bad, 0.5 * (lo[idx] + hi[idx]), new)
            done = (np.abs(new - sa) <= tol + 1e-14 * np.abs(sa)) | (hi[idx] - lo[idx] <= tol)
            s[idx] = new
            active[idx[done]] = False
        if active.any():
            for i in np.flatnonzero(active):
                s[i] = self._golden(x[i], *self._bracket(s_grid, j[i:i + 1]))
        s = self._clamp(s)
        d2 = ((self.eval(s) - x) ** 2).sum(1)
        worse = d2 > d2best
        s[worse] = s_grid[j[worse]]
        return s

    def _golden(self, x, lo, hi):
        a, b = float(np.atleast_1d(lo)[0]), float(np.atleast_1d(hi)[0])

        def f(t):
            return float(((self.eval(np.array([t]))[0] - x) ** 2).sum())

        c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
        for _ in range(100):
            if f(c) < f(d):
                b = d
            else:
                a = c
            c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
        return 0.5 * (a + b)

    def self_intersects(self, tol: float | None = None, per_segment: int = 64) -> bool:
        _, p = self.sample(per_segment)
        if self.closed:
            p = np.vstack([p, p[:1]])
        return polyline_self_intersects(p, tol if tol is not None else 1e-9 * self.length,
                                        closed=self.closed)


class Polyline(_Curve):
    """Piecewise linear open curve with the same interface as ``Spline``.

    Used where a genuine corner is wanted (kinked cracks).
    """

    def __init__(self, points):
        pts = np.array(points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise PreconditionError("Polyline: too few points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 1e-14 * max(np.ptp(pts, axis=0).max(), 1e-300)):
            raise PreconditionError("Polyline: repeated consecutive points")
        self.closed = False
        self.knots = pts
        self.params = np.concatenate([[0.0], np.cumsum(seg)])
        self._dirs = np.diff(pts, axis=0) / seg[:, None]

    def _segment(self, s):
        s = self._clamp(s)
        i = np.clip(np.searchsorted(self.params, s, side="right") - 1, 0, self.n_segments - 1)
        return s, i

    def eval(self, s) -> np.ndarray:
        s, i = self._segment(s)
        return self.knots[i] + (s - self.params[i])[..., None] * self._dirs[i]

    def derivative(self, s) -> np.ndarray:
        _, i = self._segment(s)
        return self._dirs[i]

    def second_derivative(self, s) -> np.ndarray:
        return np.zeros(np.shape(s) + (2,))

    def curvature(self, s) -> np.ndarray:
        return np.zeros(np.shape(s))

    def min_radius_of_curvature(self, per_segment: int = 64) -> float:
        return np.inf

    def _project(self, xs):
        a = self.knots[:-1]
        d = self._dirs
        seg = np.diff(self.params)
        t = ((xs[:, None, :] - a[None]) * d[None]).sum(-1)
        t = np.clip(t, 0.0, seg[None, :])
        p = a[None] + t[..., None] * d[None]
        dist = ((xs[:, None, :] - p) ** 2).sum(-1)
        j = dist.argmin(axis=1)
        return self.params[j] + t[np.arange(len(xs)), j]

    def _side_normal(self, s):
        s = np.asarray(s, dtype=float)
        n = self.normal(s)
        # at an interior corner use the bisector of the adjacent normals
        at_knot = np.isclose(s[..., None], self.params[None, 1:-1], rtol=0,
                             atol=1e-12 * self.length)
        if at_knot.any():
            nd = _rot90(self._dirs)
            rows, k = np.nonzero(at_knot)
            n = n.copy()
            bis = nd[k] + nd[k + 1]
            n[rows] = bis / np.linalg.norm(bis, axis=1, keepdims=True)
        return n

    def self_intersects(self, tol: float | None = None, per_segment: int = 1) -> bool:
        return polyline_self_intersects(self.knots, tol if tol is not None else 1e-9 * self.length)


def fit_spline(points, closed: bool = False) -> Spline:
    return Spline(points, closed=closed)


def _seg_seg_distance(p1, p2, q1, q2):
    # vectorized minimum distance between segment pairs
    def point_seg(p, a, b):
        ab = b - a
        den = (ab * ab).sum(-1)
        t = np.clip(((p - a) * ab).sum(-1) / np.where(den > 0, den, 1.0), 0, 1)
        return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    d1 = cross(p2 - p1, q1 - p1)
    d2 = cross(p2 - p1, q2 - p1)
    d3 = cross(q2 - q1, p1 - q1)
    d4 = cross(q2 - q1, p2 - q1)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    dist = np.minimum.reduce([point_seg(p1, q1, q2), point_seg(p2, q1, q2),
                              point_seg(q1, p1, p2), point_seg(q2, p1, p2)])
    return np.where(proper, 0.0, dist)


def polyline_self_intersects(p: np.ndarray, tol: float, closed: bool = False) -> bool:
    """True if any two non-adjacent segments of the polyline come within ``tol``."""
    a, b = p[:-1], p[1:]
    m = len(a)
    if m < 3:
        return False
    # segments within tol have midpoints closer than the longest segment + tol
    reach = float(np.linalg.norm(b - a, axis=1).max()) + tol
    pairs = cKDTree(0.5 * (a + b)).query_pairs(reach, output_type="ndarray")
    if len(pairs) == 0:
        return False
    i, j = pairs.min(axis=1), pairs.max(axis=1)
    keep = j - i >= 2
    if closed:
        keep &= ~((i == 0) & (j == m - 1))
    i, j = i[keep], j[keep]
    return bool(np.any(_seg_seg_distance(a[i], b[i], a[j], b[j]) <= tol))


@dataclass(frozen=True)
class CrackPath:
    """Initial crack plus the discrete set of propagated tips.

    ``base`` holds the knots of the initial crack and ends at ``tips[0]``;
    ``tips`` is the propagated tip set x_0..x_n. The crack curve is the
    spline through ``base[:-1] + tips``; growth happens at its end.
    """

    base: np.ndarray
    tips: np.ndarray
    ell0: float
    delta_ell: float
    spline: Spline = field(repr=False, compare=False)

    @classmethod
    def create(cls, base, delta_ell: float, ell0: float | None = None) -> "CrackPath":
        base = np.array(base, dtype=float).reshape(-1, 2)
        if len(base) < 2:
            raise PreconditionError("CrackPath: the initial crack needs at least two knots")
        if delta_ell <= 0:
            raise PreconditionError("CrackPath: delta_ell must be positive")
        if ell0 is None:
            ell0 = float(np.linalg.norm(np.diff(base, axis=0), axis=1).sum())
        return cls(base=base, tips=base[-1:].copy(), ell0=float(ell0),
                   delta_ell=float(delta_ell), spline=Spline(base))

    @property
    def knots(self) -> np.ndarray:
        return np.vstack([self.base[:-1], self.tips])

    @property
    def ell(self) -> float:
        return self.ell0 + float(np.linalg.norm(np.diff(self.tips, axis=0), axis=1).sum())

    @property
    def n_steps(self) -> int:
        return len(self.tips) - 1

    @property
    def tip(self) -> np.ndarray:
        return self.tips[-1]

    @property
    def end_points(self) -> np.ndarray:
        return np.array([self.spline.eval(0.0), self.spline.eval(self.spline.length)])

    def tip_tangent(self) -> np.ndarray:
        """One-sided spline derivative at the growing end."""
        return self.spline.tangent(self.spline.length)

    def append_tip(self, new_tip, rtol: float = 1e-10) -> "CrackPath":
        """Advance the crack by one increment.

        Raises:
            PreconditionError: if the step length differs from ``delta_ell``.
            RefinementNeededError: if the rebuilt spline self-intersects.
        """
        new_tip = np.asarray(new_tip, dtype=float).reshape(2)
        step = float(np.linalg.norm(new_tip - self.tip))
        if abs(step - self.delta_ell) > rtol * self.delta_ell:
            raise PreconditionError(
                f"append_tip: step {step:.17g} differs from delta_ell {self.delta_ell:.17g}")
        tips = np.vstack([self.tips, new_tip])
        spline = Spline(np.vstack([self.base[:-1], tips]))
        if spline.self_intersects(tol=1e-9 * (self.ell + step)):
            raise RefinementNeededError("append_tip: crack path self-intersects")
        return CrackPath(base=self.base, tips=tips, ell0=self.ell0,
                         delta_ell=self.delta_ell, spline=spline)


def write_curve(curve, path) -> None:
    lines = ["closed" if curve.closed else "open"]
    lines += [f"{x!r} {y!r}" for x, y in np.asarray(curve.knots).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve(path) -> Spline:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    if not lines or lines[0] not in ("open", "closed"):
        raise PreconditionError(f"{path}: curve file must start with 'open' or 'closed'")
    try:
        pts = [tuple(float(t) for t in ln.split()) for ln in lines[1:]]
    except ValueError as exc:
        raise PreconditionError(f"{path}: malformed curve file ({exc})") from exc
    return Spline(pts, closed=lines[0] == "closed")


def write_crack_path(path: CrackPath, filename) -> None:
    """CSV with ``k,x,y``; rows k <= 0 are the initial crack, k = 0 its tip."""
    m = len(path.base)
    lines = [f"# ell0={path.ell0!r}", f"# delta_ell={path.delta_ell!r}", "k,x,y"]
    for i, (x, y) in enumerate(path.base.tolist()):
        lines.append(f"{i - (m - 1)},{x!r},{y!r}")
    for k, (x, y) in enumerate(path.tips[1:].tolist(), start=1):
        lines.append(f"{k},{x!r},{y!r}")
    Path(filename).write_text("\n".join(lines) + "\n")


def read_crack_path(filename) -> CrackPath:
    meta, rows = {}, []
    for ln in Path(filename).read_text().splitlines():
        ln = ln.strip()
        if not ln:
            continue
        if ln.startswith("#"):
            key, _, val = ln[1:].partition("=")
            meta[key.strip()] = float(val)
        elif ln != "k,x,y":
            k, x, y = ln.split(",")
            rows.append((int(k), float(x), float(y)))
    if "ell0" not in meta or "delta_ell" not in meta:
        raise PreconditionError(f"{filename}: missing ell0/delta_ell header")
    base = [(x, y) for k, x, y in rows if k <= 0]
    path = CrackPath.create(base, meta["delta_ell"], ell0=meta["ell0"])
    for k, x, y in rows:
        if k > 0:
            path = path.append_tip((x, y))
    return path
