"""Ready-made meshes, curves and loads used by the verification suites."""
from __future__ import annotations

import numpy as np

from .curves import Spline, fit_spline
from .errors import PreconditionError


def random_smooth_curve(rng: np.random.Generator, bbox, h: float, closed: bool = False,
                        min_radius_factor: float = 4.0, margin_factor: float = 3.0,
                        max_tries: int = 200) -> Spline:
    """Random spline inside ``bbox`` whose curvature is resolvable at mesh size ``h``.

    Open curves are integrated from a random smooth curvature profile,
    closed curves are star-shaped with a few random Fourier modes. Candidates
    are rejected until the radius of curvature exceeds ``min_radius_factor*h``,
    the curve stays ``margin_factor*h`` away from the box and does not
    self-intersect.
    """
    x0, y0, x1, y1 = bbox
    w, ht = x1 - x0, y1 - y0
    margin = margin_factor * h
    r_min = min_radius_factor * h
    if closed and 0.85 * (0.5 * min(w, ht) - margin) / 1.25 < 1.5 * r_min:
        raise PreconditionError("random_smooth_curve: box too small for a closed curve at this h")
    for _ in range(max_tries):
        if closed:
            room = 0.5 * min(w, ht) - margin
            r0 = rng.uniform(0.5, 0.85) * room / 1.25
            c = np.array([x0 + w / 2, y0 + ht / 2]) + rng.uniform(-1, 1, 2) * 0.1 * room
            th = np.linspace(0, 2 * np.pi, 24, endpoint=False)
            r = np.full_like(th, r0)
            for k in (2, 3):
                r += r0 * rng.uniform(-0.12, 0.12) * np.cos(k * th + rng.uniform(0, 2 * np.pi))
            pts = c + np.c_[r * np.cos(th), r * np.sin(th)]
        else:
            length = rng.uniform(0.25, 0.6) * min(w, ht)
            kmax = 0.8 / r_min
            a = rng.uniform(-kmax, kmax, 3)
            s = np.linspace(0.0, length, 200)
            kappa = a[0] + a[1] * np.sin(np.pi * s / length) + a[2] * np.cos(2 * np.pi * s / length)
            kappa = np.clip(kappa, -kmax, kmax)
            heading = rng.uniform(0, 2 * np.pi) + np.concatenate(
                [[0.0], np.cumsum(0.5 * (kappa[1:] + kappa[:-1]) * np.diff(s))])
            xy = np.c_[np.cos(heading), np.sin(heading)]
            path = np.vstack([[0.0, 0.0], np.cumsum(0.5 * (xy[1:] + xy[:-1]) * np.diff(s)[:, None], 0)])
            slack = np.array([w, ht]) - 2 * margin - np.ptp(path, axis=0)
            if np.any(slack <= 0):
                continue
            start = np.array([x0, y0]) + margin - path.min(axis=0) + rng.uniform(0, 1, 2) * slack
            pts = start + path[::20]
            if len(pts) < 4 or not np.allclose(pts[-1], start + path[-1]):
                pts = np.vstack([pts, start + path[-1]])
        if (pts[:, 0].min() < x0 + margin or pts[:, 0].max() > x1 - margin
                or pts[:, 1].min() < y0 + margin or pts[:, 1].max() > y1 - margin):
            continue
        curve = fit_spline(pts, closed=closed)
        sx = curve.sample(16)[1]
        if (sx[:, 0].min() < x0 + margin or sx[:, 0].max() > x1 - margin
                or sx[:, 1].min() < y0 + margin or sx[:, 1].max() > y1 - margin):
            continue
        if curve.min_radius_of_curvature() < r_min or curve.self_intersects():
            continue
        return curve
    raise RuntimeError("could not draw an admissible random curve")


def segment_distance(points, a, b) -> np.ndarray:
    """Distance of points (k, 2) to the segment ``a``-``b``."""
    p = np.asarray(points, dtype=float)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    d = b - a
    t = np.clip(((p - a) @ d) / (d @ d), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * d), axis=1)


def polyline_distance(points, poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    return np.min([segment_distance(points, poly[i], poly[i + 1]) for i in range(len(poly) - 1)], axis=0)


def plateau_size(dist, h_fine: float, h_coarse: float, plateau: float = 6.0, growth: float = 0.3):
    """Target size ``h_fine`` within ``plateau*h_fine`` of a feature, growing linearly beyond."""
    return np.clip(h_fine + growth * np.maximum(0.0, dist - plateau * h_fine), h_fine, h_coarse)


def graded_mesh(bbox, n: int, levels: int, feature, plateau: float = 6.0, growth: float = 0.3):
    """Lattice of ``n`` columns red-refined ``levels`` times around a polyline feature.

    The fine size is the coarse lattice edge divided by ``2**levels``; the
    plateau keeps green closure elements away from the feature.
    """
    from .geometry import refine_graded, structured_acute_mesh

    base = structured_acute_mesh(bbox, n)
    w = (bbox[2] - bbox[0]) / n
    h_fine = w / 2 ** levels
    feature = np.asarray(feature, dtype=float)

    def size(c):
        # lattice triangles are near-equilateral; diameters slightly exceed w
        return 1.2 * plateau_size(polyline_distance(c, feature), h_fine, 10 * w, plateau, growth)

    return refine_graded(base, size), h_fine


class Manufactured:
    """Smooth displacement field with its exact gradient and the body force it needs.

    ``u = (sin x cos y + x^3 y, x y^2 - y^3 + e^x y)``; the body force is
    ``b = -div sigma(u)`` for the given material.
    """

    def __init__(self, material):
        self.material = material

    @staticmethod
    def displacement(x):
        x, y = x[:, 0], x[:, 1]
        return np.column_stack([np.sin(x) * np.cos(y) + x ** 3 * y,
                                x * y ** 2 - y ** 3 + np.exp(x) * y])

    @staticmethod
    def gradient(x):
        x, y = x[:, 0], x[:, 1]
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = np.cos(x) * np.cos(y) + 3 * x ** 2 * y
        g[:, 0, 1] = -np.sin(x) * np.sin(y) + x ** 3
        g[:, 1, 0] = y ** 2 + np.exp(x) * y
        g[:, 1, 1] = 2 * x * y - 3 * y ** 2 + np.exp(x)
        return g

    def body_force(self, x):
        x, y = x[:, 0], x[:, 1]
        mu, lam = self.material.mu, self.material.lam
        ux_xx = -np.sin(x) * np.cos(y) + 6 * x * y
        ux_yy = -np.sin(x) * np.cos(y)
        ux_xy = -np.cos(x) * np.sin(y) + 3 * x ** 2
        uy_xx = np.exp(x) * y
        uy_yy = 2 * x - 6 * y
        uy_xy = 2 * y + np.exp(x)
        # Navier: div sigma = mu lap u + (lam + mu) grad div u
        bx = mu * (ux_xx + ux_yy) + (lam + mu) * (ux_xx + uy_xy)
        by = mu * (uy_xx + uy_yy) + (lam + mu) * (ux_xy + uy_yy)
        return -np.column_stack([bx, by])

    def load_shapes(self):
        from .elasticity import LoadShapes
        return LoadShapes(g_bar=self.displacement, b_bar=self.body_force)


def uniaxial_shapes(bbox, sigma: float = 1.0):
    """Tension ``sigma`` on the top and bottom edges of ``bbox``, pinned at mid-height.

    The left pin fixes both components and the right pin only the vertical
    one, so the load and the constraints are symmetric about ``y = mid``.
    """
    from .elasticity import LoadShapes

    x0, y0, x1, y1 = bbox
    ym = 0.5 * (y0 + y1)
    tol = 1e-9 * max(x1 - x0, y1 - y0)

    def t_bar(x, n):
        out = np.zeros_like(x)
        top = np.abs(x[:, 1] - y1) < tol
        bot = np.abs(x[:, 1] - y0) < tol
        out[top, 1] = sigma
        out[bot, 1] = -sigma
        return out

    return LoadShapes(t_bar=t_bar, pins=[((x0, ym), (True, True)), ((x1, ym), (False, True))])


def arc_initial_crack(R: float, start_angle: float, span: float, h: float) -> np.ndarray:
    """Knots on the circle spaced at most ``h`` apart, from ``start_angle`` over ``span``."""
    ang = np.linspace(start_angle, start_angle + span, int(np.ceil(R * span / h)) + 1)
    return R * np.column_stack([np.cos(ang), np.sin(ang)])
