"""Stress intensity factors, load scaling, kink direction and crack propagation."""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conformer import ConformParams, conform, split_crack
from .curves import CrackPath
from .elasticity import FemMesh, FemSolution, LoadShapes, Material, assemble, solve
from .errors import PreconditionError, PropagationError, UnimeshError

SIF_RADII = (1.0, 0.75, 0.5)


@dataclass(frozen=True)
class TipFrame:
    """Crack tip with orthonormal, right-handed (tangent, normal) axes."""

    tip: np.ndarray
    tangent: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tangent, dtype=float)
        n = np.linalg.norm(t)
        if not n > 0:
            raise PreconditionError("tip tangent must be nonzero")
        object.__setattr__(self, "tangent", t / n)
        object.__setattr__(self, "tip", np.asarray(self.tip, dtype=float))

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.tangent[1], self.tangent[0]])

    @property
    def rotation(self) -> np.ndarray:
        """Columns are (tangent, normal): global = R @ local."""
        return np.column_stack([self.tangent, self.normal])

    @classmethod
    def from_curve(cls, curve, end: str = "end") -> "TipFrame":
        """Frame at a curve end; the tangent points out of the crack."""
        if end == "end":
            return cls(curve.eval(curve.length), curve.tangent(curve.length))
        if end == "start":
            return cls(curve.eval(0.0), -curve.tangent(0.0))
        raise ValueError(f"end must be 'start' or 'end', got {end!r}")

    def to_local(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.tip) @ self.rotation

    def polar(self, x):
        xl = self.to_local(x)
        return np.hypot(xl[..., 0], xl[..., 1]), np.arctan2(xl[..., 1], xl[..., 0])


@dataclass(frozen=True)
class SifResult:
    K_I: float
    K_II: float
    q_radius: float
    domain_independence_spread: float
    radii: tuple = ()
    values: tuple = ()
    flagged: bool = False

    @property
    def ratio(self) -> float:
        return self.K_II / self.K_I


def _williams_g(mode, th, kappa):
    h, c, s = 0.5 * th, np.cos(th), np.sin(th)
    if mode == "I":
        g = np.stack([np.cos(h) * (kappa - c), np.sin(h) * (kappa - c)], -1)
        dg = np.stack([-0.5 * np.sin(h) * (kappa - c) + np.cos(h) * s,
                       0.5 * np.cos(h) * (kappa - c) + np.sin(h) * s], -1)
    elif mode == "II":
        g = np.stack([np.sin(h) * (kappa + 2 + c), -np.cos(h) * (kappa - 2 + c)], -1)
        dg = np.stack([0.5 * np.cos(h) * (kappa + 2 + c) - np.sin(h) * s,
                       0.5 * np.sin(h) * (kappa - 2 + c) + np.cos(h) * s], -1)
    else:
        raise ValueError(f"mode must be 'I' or 'II', got {mode!r}")
    return g, dg


def williams_local(mode: str, r, th, material: Material):
    """Unit-SIF tip fields in tip coordinates.

    Returns:
        (u (...,2), grad (...,2,2), stress (...,2,2)) with ``grad[i, j] = du_i/dx_j``.
    """
    r = np.asarray(r, dtype=float)
    th = np.asarray(th, dtype=float)
    mu, kappa = material.mu, material.kappa
    amp = 1.0 / (2.0 * mu * np.sqrt(2.0 * np.pi))
    g, dg = _williams_g(mode, th, kappa)
    sr = np.sqrt(r)[..., None]
    u = amp * sr * g
    c, s = np.cos(th)[..., None], np.sin(th)[..., None]
    d1 = amp * (c * 0.5 * g - s * dg) / sr
    d2 = amp * (s * 0.5 * g + c * dg) / sr
    grad = np.stack([d1, d2], axis=-1)
    h = 0.5 * th
    f = 1.0 / np.sqrt(2.0 * np.pi * r)
    if mode == "I":
        sxx = f * np.cos(h) * (1 - np.sin(h) * np.sin(3 * h))
        syy = f * np.cos(h) * (1 + np.sin(h) * np.sin(3 * h))
        sxy = f * np.sin(h) * np.cos(h) * np.cos(3 * h)
    else:
        sxx = -f * np.sin(h) * (2 + np.cos(h) * np.cos(3 * h))
        syy = f * np.sin(h) * np.cos(h) * np.cos(3 * h)
        sxy = f * np.cos(h) * (1 - np.sin(h) * np.sin(3 * h))
    sig = np.stack([np.stack([sxx, sxy], -1), np.stack([sxy, syy], -1)], -2)
    return u, grad, sig


def williams_aux(mode: str, frame: TipFrame, material: Material, x, scale: float = 1.0):
    """Unit-SIF asymptotic displacement and stress at global points ``x``.

    ``theta`` in (-pi, pi]; the crack lies along theta = +-pi. Fields are
    rotated to global coordinates.

    Raises:
        PreconditionError: for points closer than ``1e-14 * scale`` to the tip.
    """
    x = np.asarray(x, dtype=float)
    r, th = frame.polar(x)
    if np.any(r < 1e-14 * scale):
        raise PreconditionError("auxiliary field evaluated at the crack tip singularity")
    u, _, sig = williams_local(mode, r, th, material)
    R = frame.rotation
    return u @ R.T, R @ sig @ R.T


def _q_weight(r, rq):
    # 1 inside rq/2, cubic smoothstep down to 0 at rq
    t = np.clip((r - 0.5 * rq) / (0.5 * rq), 0.0, 1.0)
    q = 1.0 - t * t * (3.0 - 2.0 * t)
    dq = np.where((t > 0) & (t < 1), -6.0 * t * (1.0 - t) / (0.5 * rq), 0.0)
    return q, dq


def tip_size(fem: FemMesh, tip) -> float:
    d = np.linalg.norm(fem.points - tip, axis=1)
    v = int(np.argmin(d))
    tris = np.flatnonzero((fem.triangles == v).any(axis=1))
    p = fem.points[fem.triangles[tris]]
    L = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
    return float(L.max(axis=1).mean())


def _boundary_distance(fem: FemMesh, tip) -> float:
    e = fem.outer_edge_ids
    if not len(e):
        return np.inf
    a, b = fem.points[fem.edges[e, 0]], fem.points[fem.edges[e, 1]]
    d = b - a
    t = np.clip(((tip - a) * d).sum(1) / (d * d).sum(1), 0.0, 1.0)
    return float(np.linalg.norm(a + t[:, None] * d - tip, axis=1).min())


def _interaction_at(sol: FemSolution, frame: TipFrame, rq: float, theta_sign):
    mat = sol.material
    R = frame.rotation
    I = np.zeros(2)
    sel = theta_sign["elements"]
    for x, w, _, grad in sol.quadrature():
        x, w, grad = x[sel], w[sel], grad[sel]
        xl = frame.to_local(x)
        r = np.hypot(xl[:, 0], xl[:, 1])
        q, dq = _q_weight(r, rq)
        act = dq != 0
        if not act.any():
            continue
        xl, r, w, dq, grad = xl[act], r[act], w[act], dq[act], grad[act]
        th = np.arctan2(xl[:, 1], xl[:, 0])
        want = theta_sign["sign"][act]
        flip = (want != 0) & (np.sign(th) != want) & (xl[:, 0] < 0)
        th[flip] += 2.0 * np.pi * want[flip]
        gq = dq[:, None] * xl / r[:, None]
        gl = R.T @ grad @ R
        sl = mat.stress(gl)
        for m, mode in enumerate(("I", "II")):
            _, ga, sa = williams_local(mode, r, th, mat)
            ea = 0.5 * (ga + np.swapaxes(ga, -1, -2))
            wint = np.einsum("eij,eij->e", sl, ea)
            # sigma_ij ua_i,1 + sa_ij u_i,1 - W_int delta_1j, contracted with q_,j
            term = np.einsum("eij,ei->ej", sl, ga[:, :, 0]) + np.einsum("eij,ei->ej", sa, gl[:, :, 0])
            term[:, 0] -= wint
            I[m] += float((w * (term * gq).sum(1)).sum())
    return 0.5 * mat.E_star * I


def interaction_integral(sol: FemSolution, frame: TipFrame, r_q: float | None = None,
                         curve=None, orientation: int = 1, radii=SIF_RADII) -> SifResult:
    """Domain interaction integral for (K_I, K_II) at a crack tip.

    Args:
        sol: FEM solution on the split mesh.
        frame: tip frame (tangent along the growth direction).
        r_q: outer radius of the weight; defaults to 4 x tip element size and
            shrinks automatically if the disk would reach the outer boundary.
        curve: the crack curve, used to pick the theta branch (+-pi) of
            elements behind the tip; without it atan2 is used directly.
        orientation: +1 if the frame normal points to the curve's positive
            side (end tip), -1 otherwise (start tip).
        radii: fractions of ``r_q`` used to measure domain independence.

    Raises:
        PreconditionError: if the tip region is too close to the outer boundary.
    """
    fem = sol.fem
    h_tip = tip_size(fem, frame.tip)
    if r_q is None:
        r_q = 4.0 * h_tip
    dist_b = _boundary_distance(fem, frame.tip)
    if r_q > 0.95 * dist_b:
        r_q = 0.95 * dist_b
        if r_q < 1.0 * h_tip:
            raise PreconditionError("interaction integral domain clipped by the outer boundary")
    cent = fem.points[fem.triangles].mean(axis=1)
    reach = r_q + 2.0 * np.sqrt(2.0 * fem.areas.max())
    elements = np.flatnonzero(np.linalg.norm(cent - frame.tip, axis=1) < reach)
    sign = np.zeros(len(elements), dtype=int)
    if curve is not None:
        side = np.asarray(curve.closest_point(cent[elements]).side)
        sign = orientation * np.where(side >= 0, 1, -1)
    info = {"elements": elements, "sign": sign}
    vals = [_interaction_at(sol, frame, f * r_q, info) for f in radii]
    K = vals[0]
    arr = np.array(vals)
    spread = float(np.ptp(arr, axis=0).max() / max(np.hypot(*K), 1e-300))
    flagged = spread > 0.1
    if flagged:
        warnings.warn(f"SIF domain-independence spread {spread:.3g} exceeds 10%", RuntimeWarning)
    return SifResult(float(K[0]), float(K[1]), float(r_q), spread,
                     tuple(f * r_q for f in radii), tuple(map(tuple, arr)), flagged)


def displacement_correlation(sol: FemSolution, frame: TipFrame, curve, r: float,
                             orientation: int = 1):
    """(K_I, K_II) from the crack opening at distance ``r`` behind the tip.

    The flank points are taken on the crack curve at arc distance ``r``.
    """
    L = curve.length
    s = L - r if orientation > 0 else r
    p = curve.eval(s)
    up = sol.evaluate(p, side=+1)[0]
    um = sol.evaluate(p, side=-1)[0]
    jump = (up - um) @ frame.rotation * orientation
    mat = sol.material
    f = mat.mu / (mat.kappa + 1.0) * np.sqrt(2.0 * np.pi / r)
    return float(f * jump[1]), float(f * jump[0])


def load_scale(K_I_unit: float, K_c: float) -> float:
    """Scale C with C * K_I_unit = K_c.

    Raises:
        PreconditionError: if the crack is not opening (K_I_unit <= 0).
    """
    if not K_I_unit > 0:
        raise PreconditionError("crack not opening; always-propagating assumption violated "
                                f"(K_I = {K_I_unit:.4g})")
    return K_c / K_I_unit


def kink_direction(ratio: float, tangent=(1.0, 0.0), ratio_max: float = 0.5):
    """First-order local-symmetry kink angle ``-2 K_II/K_I`` and growth direction.

    Raises:
        PreconditionError: if ``|ratio| > ratio_max``.
    """
    if abs(ratio) > ratio_max:
        raise PreconditionError(f"kink too large for first-order formula (|K_II/K_I| = {abs(ratio):.3g} "
                                f"> {ratio_max})")
    th = -2.0 * ratio
    t = np.asarray(tangent, dtype=float)
    t = t / np.linalg.norm(t)
    c, s = np.cos(th), np.sin(th)
    return th, np.array([c * t[0] - s * t[1], s * t[0] + c * t[1]])


def kinked_k2(theta, K_I, K_II):
    """K_II at the tip of an infinitesimal kink of angle ``theta``."""
    h = 0.5 * theta
    return 0.25 * (np.sin(h) + np.sin(3 * h)) * K_I + 0.25 * (np.cos(h) + 3 * np.cos(3 * h)) * K_II


RECORD_FIELDS = ("step", "ell", "tip_x", "tip_y", "K_I", "K_II", "C", "theta_k", "min_quality")


@dataclass
class PropagationRecord:
    """Per-step history; K_I, K_II are unit-load values so that K_I * C = K_c."""

    rows: list = field(default_factory=list)
    path: CrackPath | None = None
    status: str = "ok"

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(RECORD_FIELDS) + "\n")
        for r in self.rows:
            vals = [str(int(r["step"]))] + [f"{float(r[k]):.17g}" for k in RECORD_FIELDS[1:]]
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "PropagationRecord":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        head = lines[0].split(",")
        if tuple(head) != RECORD_FIELDS:
            raise ValueError(f"unexpected record header {lines[0]!r}")
        rows = []
        for ln in lines[1:]:
            v = ln.split(",")
            row = {"step": int(v[0])}
            row.update({k: float(x) for k, x in zip(RECORD_FIELDS[1:], v[1:])})
            rows.append(row)
        return cls(rows=rows)


@dataclass
class PropagationParams:
    """Controls of the propagation loop.

    ``r_q_factor`` scales the tip element size into the SIF domain radius.
    """

    conform: ConformParams = field(default_factory=ConformParams)
    r_q_factor: float = 4.0
    tol: float = 1e-10
    solver: str = "pcg"
    ratio_max: float = 0.5
    threads: int = 1
    on_step: Callable | None = None


@dataclass
class StepResult:
    conformed: object
    solution: FemSolution
    sif: SifResult


def analyze(mesh, path_or_curve, material: Material, shapes: LoadShapes,
            params: PropagationParams = PropagationParams()) -> StepResult:
    """Conform, split, solve with C = 1 and extract SIFs at the end tip.

    A failing stage is recorded on the exception as ``exc.stage``.
    """
    curve = path_or_curve.spline if isinstance(path_or_curve, CrackPath) else path_or_curve
    stage = "conform"
    try:
        cm = split_crack(conform(mesh, curve, params.conform))
        stage = "solve"
        fem = FemMesh.from_conformed(cm)
        sol = solve(assemble(fem, material, shapes, 1.0, threads=params.threads),
                    tol=params.tol, method=params.solver)
        stage = "extract"
        frame = TipFrame.from_curve(curve, "end")
        h_tip = tip_size(fem, frame.tip)
        sif = interaction_integral(sol, frame, params.r_q_factor * h_tip, curve=curve)
    except UnimeshError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = stage
        raise
    return StepResult(cm, sol, sif)


def propagate(mesh, path: CrackPath, material: Material, shapes, n_steps: int,
              params: PropagationParams = PropagationParams()) -> PropagationRecord:
    """Quasi-static propagation of the end tip of ``path``.

    Each step conforms the same universal ``mesh`` to the current crack,
    solves with unit load scale, extracts (K_I, K_II), scales the load so
    that ``C * K_I = K_c``, and advances the tip by ``path.delta_ell`` along
    the kink direction.

    Args:
        shapes: ``LoadShapes`` or a callable ``path -> LoadShapes``.

    Raises:
        PropagationError: wrapping the failure of any stage; ``record`` holds
            the completed steps.
    """
    rec = PropagationRecord(path=path)
    for k in range(n_steps):
        stage = "load"
        try:
            load = shapes(path) if callable(shapes) and not isinstance(shapes, LoadShapes) else shapes
            res = analyze(mesh, path, material, load, params)
            stage = "kink"
            C = load_scale(res.sif.K_I, material.K_c)
            th, d = kink_direction(res.sif.ratio, path.tip_tangent(), params.ratio_max)
        except UnimeshError as exc:
            stage = getattr(exc, "stage", None) or stage
            rec.status = f"failed at step {k} [{stage}]: {exc}"
            raise PropagationError(str(exc), k, path.ell, rec, exc, stage) from exc
        tip = path.tip
        rec.rows.append({"step": k, "ell": path.ell, "tip_x": tip[0], "tip_y": tip[1],
                         "K_I": res.sif.K_I, "K_II": res.sif.K_II, "C": C,
                         "theta_k": th, "min_quality": res.conformed.min_quality})
        if params.on_step is not None:
            params.on_step(k, path, res)
        try:
            path = path.append_tip(tip + path.delta_ell * d)
        except UnimeshError as exc:
            rec.status = f"failed at step {k} [advance]: {exc}"
            raise PropagationError(str(exc), k, path.ell, rec, exc, "advance") from exc
        rec.path = path
    return rec
