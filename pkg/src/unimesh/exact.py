"""Closed-form fields of cracks in an infinite plane under uniform remote stress.

Both fields are written with complex potentials: stresses follow from
``s_xx + s_yy = 4 Re Phi`` and ``s_yy - s_xx + 2i s_xy = 2 (conj(z) Phi' + Psi)``
and displacements from ``2 mu (u_x + i u_y) = kappa phi - z conj(Phi) - conj(psi)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elasticity import LoadShapes, Material
from .errors import PreconditionError


def _far_constants(S):
    # Phi(inf) and Psi(inf) for a remote stress tensor S
    S = np.asarray(S, dtype=float)
    G = 0.25 * (S[0, 0] + S[1, 1])
    Gp = 0.5 * (S[1, 1] - S[0, 0]) + 1j * S[0, 1]
    return G, Gp


def _rot(beta):
    c, s = np.cos(beta), np.sin(beta)
    return np.array([[c, -s], [s, c]])


class ReferenceField:
    """Analytic field of a crack in the plane, placed by a similarity map.

    Subclasses implement ``_local(z, mat)`` returning complex
    ``(Phi, dPhi, Psi, phi, psi)`` in unit-scale local coordinates and
    ``_on_cut(z)`` marking points on the crack.
    """

    material: Material
    center: np.ndarray
    beta: float
    scale: float
    far_field: np.ndarray

    def _to_local(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xl = (x - self.center) @ _rot(self.beta) / self.scale
        return xl[:, 0] + 1j * xl[:, 1]

    def _apply_side(self, z, side):
        cut = self._on_cut(z)
        if np.any(cut):
            if side is None:
                raise PreconditionError("evaluation on the crack requires a flank hint")
            sgn = np.broadcast_to(np.asarray(side), z.shape)
            z = self._nudge(z, cut, sgn)
        return z

    def _nudge(self, z, cut, sgn):
        raise NotImplementedError

    def _on_cut(self, z):
        return np.zeros(z.shape, dtype=bool)

    def displacement(self, x, side=None) -> np.ndarray:
        """(k, 2) displacement at global points; ``side`` (+1/-1) selects a flank on the crack."""
        single = np.asarray(x).ndim == 1
        z = self._apply_side(self._to_local(x), side)
        Phi, _, _, phi, psi = self._local(z)
        mat = self.material
        w = (mat.kappa * phi - z * np.conj(Phi) - np.conj(psi)) / (2.0 * mat.mu) * self.scale
        u = np.column_stack([w.real, w.imag]) @ _rot(self.beta).T
        return u[0] if single else u

    def stress(self, x, side=None) -> np.ndarray:
        """(k, 2, 2) stress at global points."""
        single = np.asarray(x).ndim == 1
        z = self._apply_side(self._to_local(x), side)
        Phi, dPhi, Psi, _, _ = self._local(z)
        a = 4.0 * Phi.real
        b = 2.0 * (np.conj(z) * dPhi + Psi)
        syy = 0.5 * (a + b.real)
        sxx = 0.5 * (a - b.real)
        sxy = 0.5 * b.imag
        S = np.stack([np.stack([sxx, sxy], -1), np.stack([sxy, syy], -1)], -2)
        Q = _rot(self.beta)
        S = Q @ S @ Q.T
        return S[0] if single else S

    def load_shapes(self) -> LoadShapes:
        """Dirichlet data on the whole outer boundary from this field."""
        return LoadShapes(g_bar=lambda x: self.displacement(x))


@dataclass
class GriffithField(ReferenceField):
    """Straight crack of half-length ``a`` centered at ``center`` at angle ``beta``.

    ``far_field`` is the global remote stress tensor.
    """

    a: float
    far_field: np.ndarray
    material: Material
    center: np.ndarray = None
    beta: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise PreconditionError("crack half-length must be positive")
        self.center = np.zeros(2) if self.center is None else np.asarray(self.center, dtype=float)
        self.far_field = np.asarray(self.far_field, dtype=float)
        self.scale = self.a
        Q = _rot(self.beta)
        self._G, self._Gp = _far_constants(Q.T @ self.far_field @ Q)

    @property
    def tips(self):
        t = np.array([np.cos(self.beta), np.sin(self.beta)])
        return self.center - self.a * t, self.center + self.a * t

    def _on_cut(self, z):
        return (np.abs(z.imag) == 0.0) & (np.abs(z.real) < 1.0)

    def _nudge(self, z, cut, sgn):
        # a denormal imaginary part selects the branch without changing values
        z = z.copy()
        z[cut] = z[cut].real + 1j * np.where(sgn[cut] > 0, 1e-300, -1e-300)
        return z

    def _local(self, z):
        X = np.sqrt(z - 1.0) * np.sqrt(z + 1.0)
        G, Gp = self._G, self._Gp
        A = 2.0 * G + np.conj(Gp)
        Ab = 2.0 * G + Gp
        Phi = 0.5 * (A * z / X - np.conj(Gp))
        dPhi = -0.5 * A / X ** 3
        Om_b = 0.5 * (Ab * z / X + Gp)
        Psi = Om_b - Phi - z * dPhi
        phi = 0.5 * (A * X - np.conj(Gp) * z)
        psi = 0.5 * (Ab * X + Gp * z) - z * Phi
        return Phi, dPhi, Psi, phi, psi

    def sif(self):
        """((K_I, K_II) at the +beta tip, (K_I, K_II) at the other tip)."""
        k = np.sqrt(np.pi * self.a) * (2.0 * self._G + np.conj(self._Gp))
        return (float(k.real), float(-k.imag)), (float(k.real), float(-k.imag))


def griffith_field(sigma: float, a: float, material: Material, center=(0.0, 0.0),
                   beta: float = 0.0) -> GriffithField:
    """Straight crack under remote tension ``sigma`` normal to the crack."""
    if sigma == 0:
        raise PreconditionError("remote tension must be nonzero")
    Q = _rot(beta)
    S = Q @ np.array([[0.0, 0.0], [0.0, sigma]]) @ Q.T
    return GriffithField(a=a, far_field=S, material=material, center=np.asarray(center, float), beta=beta)


def inclined_crack_sif(sigma: float, a: float, beta: float):
    """(K_I, K_II) for uniaxial tension at angle ``beta`` between crack normal and load axis."""
    if not a > 0:
        raise PreconditionError("crack half-length must be positive")
    k = sigma * np.sqrt(np.pi * a)
    return k * np.cos(beta) ** 2, k * np.sin(beta) * np.cos(beta)


@dataclass
class ArcCrackField(ReferenceField):
    """Circular-arc crack of radius ``R`` about ``center`` spanning ``beta +- span``.

    The arc runs counterclockwise; ``tips[1]`` (angle ``beta + span``) is the end tip.
    """

    R: float
    span: float
    far_field: np.ndarray
    material: Material
    center: np.ndarray = None
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.span < 0.5 * np.pi:
            raise PreconditionError(f"arc half-angle {self.span} outside (0, pi/2)")
        if not self.R > 0:
            raise PreconditionError("arc radius must be positive")
        self.center = np.zeros(2) if self.center is None else np.asarray(self.center, dtype=float)
        self.far_field = np.asarray(self.far_field, dtype=float)
        self.scale = self.R
        Q = _rot(self.beta)
        G, Gp = _far_constants(Q.T @ self.far_field @ Q)
        al = self.span
        ca = np.cos(al)
        self._G, self._Gp = G, Gp
        self._a, self._b = np.exp(-1j * al), np.exp(1j * al)
        rhs = G * (1 + ca) + 0.5 * np.sin(al) ** 2 * np.conj(Gp)
        p = rhs.real / (3 - ca) + 1j * rhs.imag / (1 + ca)
        self._p = p
        self._B = G + np.conj(p)

    @property
    def tips(self):
        c = self.center
        return (c + self.R * np.array([np.cos(self.beta - self.span), np.sin(self.beta - self.span)]),
                c + self.R * np.array([np.cos(self.beta + self.span), np.sin(self.beta + self.span)]))

    def _on_cut(self, z):
        return (np.abs(np.abs(z) - 1.0) < 1e-13) & (np.abs(np.angle(z)) < self.span)

    def _nudge(self, z, cut, sgn):
        # radial offset toward the requested flank (+1 = outside of the circle)
        z = z.copy()
        z[cut] = z[cut] * (1.0 + np.where(sgn[cut] > 0, 1e-15, -1e-15))
        return z

    def _X(self, z):
        a, b = self._a, self._b
        X = (z - a) * np.sqrt((z - b) / (z - a))
        seg = (np.abs(z) < 1.0) & (z.real > np.cos(self.span))
        return np.where(seg, -X, X)

    def _local(self, z):
        z = np.asarray(z, dtype=complex)
        a, b = self._a, self._b
        G, Gp, p, B = self._G, self._Gp, self._p, self._B
        ca = np.cos(self.span)
        Gpb = np.conj(Gp)
        X = self._X(z)
        dX = 0.5 * X * (1.0 / (z - a) + 1.0 / (z - b))
        P = Gpb / z ** 2 - ca * Gpb / z + B * (z - ca)
        dP = -2.0 * Gpb / z ** 3 + ca * Gpb / z ** 2 + B
        Phi = 0.5 * (G - np.conj(p) + Gpb / z ** 2 + P / X)
        dPhi = 0.5 * (-2.0 * Gpb / z ** 3 + (dP * X - P * dX) / X ** 2)
        Om_inv = 0.5 * (G - p + Gp * z ** 2
                        + (Gp * z ** 3 - ca * Gp * z ** 2 + np.conj(B) * (1 - z * ca)) / X)
        Psi = (Om_inv + Phi) / z ** 2 - dPhi / z
        phi = 0.5 * ((G - np.conj(p)) * z - Gpb / z + B * X - Gpb * X / z)
        psi = -Phi / z - 0.5 * ((G - p) / z - Gp * z + np.conj(B) * X / z - Gp * X)
        return Phi, dPhi, Psi, phi, psi

    def sif(self):
        """((K_I, K_II) at the start tip, (K_I, K_II) at the end tip), tip frames pointing out of the crack."""
        out = []
        G, Gp, B = self._G, self._Gp, self._B
        ca = np.cos(self.span)
        for tip, om in ((self._a, -self.span - 0.5 * np.pi), (self._b, self.span + 0.5 * np.pi)):
            P = np.conj(Gp) / tip ** 2 - ca * np.conj(Gp) / tip + B * (tip - ca)
            other = self._b if tip == self._a else self._a
            c = np.sqrt((tip - other) * np.exp(1j * om))
            # branch sign from X slightly off the tip, where X ~ c sqrt(r)
            r = 1e-6
            if (self._X(np.array([tip + r * np.exp(1j * om)]))[0] / np.sqrt(r) / c).real < 0:
                c = -c
            k = np.sqrt(2.0 * np.pi) * P / c * np.sqrt(self.R)
            out.append((float(k.real), float(-k.imag)))
        return tuple(out)


def arc_crack_field(R: float, span: float, far_field, material: Material, center=(0.0, 0.0),
                    beta: float = 0.0) -> ArcCrackField:
    """Arc crack of radius ``R`` and half-angle ``span`` under remote stress ``far_field``."""
    return ArcCrackField(R=R, span=span, far_field=np.asarray(far_field, float), material=material,
                         center=np.asarray(center, float), beta=beta)


def arc_crack_sif(R: float, span: float, far_field, material: Material | None = None,
                  beta: float = 0.0):
    """Tip SIFs of the arc crack (start tip, end tip)."""
    mat = material or Material()
    return arc_crack_field(R, span, far_field, mat, beta=beta).sif()


def arc_history_field(ell: float, R: float = 2.0, start_angle: float = -np.pi / 8,
                      parallel: float = 0.0, material: Material | None = None,
                      center=(0.0, 0.0)) -> ArcCrackField:
    """Arc crack of length ``ell`` loaded so that it keeps growing along its circle.

    The arc starts at ``start_angle`` on the circle of radius ``R`` and runs
    counterclockwise. In the frame of the end tip the remote stress is unit
    tension normal to the crack, ``parallel`` along it, and the shear that
    makes K_II vanish at the end tip. ``parallel`` controls the T-stress and
    hence how strongly a perturbed path is pulled back onto the circle.
    """
    mat = material or Material()
    span = ell / R
    if not 0.0 < span < np.pi:
        raise PreconditionError(f"arc length {ell} outside (0, pi R)")
    beta = start_angle + 0.5 * span
    phi = start_angle + span
    t = np.array([-np.sin(phi), np.cos(phi)])
    n = np.array([np.cos(phi), np.sin(phi)])
    S0 = np.outer(n, n) + parallel * np.outer(t, t)
    S1 = np.outer(t, n) + np.outer(n, t)
    k0 = arc_crack_field(R, 0.5 * span, S0, mat, center, beta).sif()[1][1]
    k1 = arc_crack_field(R, 0.5 * span, S1, mat, center, beta).sif()[1][1]
    return arc_crack_field(R, 0.5 * span, S0 - (k0 / k1) * S1, mat, center, beta)


def arc_loading_history(ell: float, R: float = 2.0, start_angle: float = -np.pi / 8,
                        parallel: float = 0.0, material: Material | None = None,
                        center=(0.0, 0.0)) -> LoadShapes:
    """Unit Dirichlet load shape on the whole outer boundary for crack length ``ell``.

    See ``arc_history_field`` for the far field; tractions and body loads are zero.
    """
    return arc_history_field(ell, R, start_angle, parallel, material, center).load_shapes()
