"""Verification suites with measured numbers and pass/fail verdicts.

Every suite returns a ``SuiteReport``. Its CSV is built only from computed
quantities (never timings), so sequential re-runs are byte-identical.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .conformer import ConformParams, conform, split_crack
from .curves import CrackPath, Polyline
from .elasticity import FemMesh, Material, l2_error, energy_error, solve_problem
from .exact import GriffithField, arc_history_field, arc_loading_history, griffith_field
from .fracture import (PropagationParams, TipFrame, analyze, displacement_correlation,
                       interaction_integral, propagate, tip_size)
from .geometry import refine_uniform, signed_quality, structured_acute_mesh
from .problems import (Manufactured, arc_initial_crack, graded_mesh, random_smooth_curve,
                       uniaxial_shapes)

SUITES = ("conform-fuzz", "patch", "mms", "griffith", "kink", "straight", "arc")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class SuiteReport:
    suite: str
    checks: list = field(default_factory=list)
    columns: tuple = ()
    rows: list = field(default_factory=list)
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed, detail: str) -> Check:
        c = Check(name, bool(passed), detail)
        self.checks.append(c)
        return c

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks]

    def to_csv(self) -> str:
        out = [",".join(self.columns)]
        for r in self.rows:
            out.append(",".join(_fmt(v) for v in r))
        return "\n".join(out) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _order(h, e) -> float:
    # least-squares slope of log e against log h
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


# ---------------------------------------------------------------- conformation

def conform_fuzz(levels=(0, 1, 2), n_curves: int = 100, n: int = 16, seed: int = 0,
                 q_min: float = 0.2) -> SuiteReport:
    """Random smooth open cracks conformed on one lattice and its uniform refinements.

    Curves are drawn once against the coarsest lattice (radius of curvature
    at least 4h, margin 3h from the box) and reused on every level.
    """
    t0 = time.perf_counter()
    rep = SuiteReport("conform-fuzz", columns=("level", "curve", "ok", "min_quality",
                                               "n_inverted", "max_deviation"))
    box = (0.0, 0.0, 1.0, 1.0)
    base = structured_acute_mesh(box, n)
    rng = np.random.default_rng(seed)
    curves = [random_smooth_curve(rng, box, base.h_max) for _ in range(n_curves)]
    params = ConformParams(q_min=q_min)
    meshes = [base]
    while len(meshes) <= max(levels):
        meshes.append(refine_uniform(meshes[-1]))
    worst = {}
    for lv in levels:
        mesh = meshes[lv]
        t1 = time.perf_counter()
        ok = inverted = 0
        qmin, dev = np.inf, 0.0
        for i, c in enumerate(curves):
            try:
                cm = split_crack(conform(mesh, c, params))
            except Exception as exc:  # noqa: BLE001 - every failure counts against the suite
                rep.rows.append((lv, i, False, 0.0, -1, np.inf))
                rep.data.setdefault("failures", []).append((lv, i, repr(exc)))
                continue
            sq = signed_quality(cm.positions, cm.triangles)
            n_inv = int((sq <= 0).sum())
            d = float(c.closest_point(cm.positions[cm.gamma.vertices]).distance.max())
            rep.rows.append((lv, i, True, cm.min_quality, n_inv, d))
            ok += 1
            inverted += n_inv
            qmin = min(qmin, cm.min_quality)
            dev = max(dev, d)
        worst[lv] = qmin
        secs = time.perf_counter() - t1
        rep.data[f"seconds_level_{lv}"] = secs
        rep.check(f"robustness level {lv}",
                  ok == n_curves and inverted == 0 and qmin >= q_min and dev <= 1e-10,
                  f"{ok}/{n_curves} conformed, {inverted} inverted, min quality {qmin:.4f} "
                  f"(>= {q_min}), max Gamma_h deviation {dev:.2e} (<= 1e-10), {secs:.1f} s")
    if len(worst) > 1:
        q = np.array(list(worst.values()))
        var = float((q.max() - q.min()) / q.max()) if np.all(np.isfinite(q)) else np.inf
        rep.data["quality_variation"] = var
        rep.check("quality under refinement", var < 0.2,
                  "worst min quality per level " + ", ".join(f"{x:.4f}" for x in q)
                  + f"; relative variation {var:.3f} (< 0.2)")
    rep.data["worst_quality"] = worst
    rep.seconds = time.perf_counter() - t0
    rep.check("runtime", rep.seconds <= 60, f"{rep.seconds:.1f} s (<= 60 s)")
    return rep


# ---------------------------------------------------------------- elasticity

def patch(n: int = 6, seed: int = 0, material: Material | None = None) -> SuiteReport:
    """Random affine boundary displacement must be reproduced at every node."""
    t0 = time.perf_counter()
    mat = material or Material()
    rep = SuiteReport("patch", columns=("node", "error"))
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (2, 2))
    c = rng.uniform(-1, 1, 2)
    fm = FemMesh.from_triangulation(structured_acute_mesh((0.0, 0.0, 1.0, 1.0), n))
    from .elasticity import LoadShapes
    sol = solve_problem(fm, mat, LoadShapes(g_bar=lambda x: x @ A.T + c), tol=1e-13)
    err = np.abs(sol.u - (fm.nodes @ A.T + c)).max(axis=1)
    rep.rows = list(enumerate(err))
    rep.seconds = time.perf_counter() - t0
    rep.data["max_error"] = float(err.max())
    rep.check("patch test", err.max() <= 1e-9,
              f"max nodal error {err.max():.2e} (<= 1e-9) over {fm.n_nodes} nodes")
    rep.check("runtime", rep.seconds <= 5, f"{rep.seconds:.2f} s (<= 5 s)")
    return rep


def mms(levels: int = 4, n: int = 4, material: Material | None = None) -> SuiteReport:
    """Manufactured-solution convergence of the quadratic elements."""
    t0 = time.perf_counter()
    mat = material or Material()
    ms = Manufactured(mat)
    rep = SuiteReport("mms", columns=("level", "h", "l2_error", "energy_error"))
    mesh = structured_acute_mesh((0.0, 0.0, 1.0, 1.0), n)
    for lv in range(levels):
        sol = solve_problem(FemMesh.from_triangulation(mesh), mat, ms.load_shapes())
        rep.rows.append((lv, mesh.h_max, l2_error(sol, ms.displacement),
                         energy_error(sol, ms.gradient)))
        if lv + 1 < levels:
            mesh = refine_uniform(mesh)
    e = np.array([r[1:] for r in rep.rows])
    o2 = np.log2(e[:-1, 1] / e[1:, 1])
    oe = np.log2(e[:-1, 2] / e[1:, 2])
    rep.data.update(l2_orders=o2, energy_orders=oe)
    rep.check("L2 order", abs(o2[-1] - 3.0) <= 0.3,
              "orders " + ", ".join(f"{x:.3f}" for x in o2) + " (3.0 +- 0.3 on the finest pair)")
    rep.check("energy order", abs(oe[-1] - 2.0) <= 0.3,
              "orders " + ", ".join(f"{x:.3f}" for x in oe) + " (2.0 +- 0.3 on the finest pair)")
    rep.seconds = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- fracture

def griffith(levels=(0, 1, 2), r_q: float = 0.4, threads: int = 1) -> SuiteReport:
    """Center crack, exact Dirichlet data, tip-graded mesh refined uniformly.

    Level 0 has ``h_tip = a/10`` and every level halves it, so level 2 has
    ``h_tip = a/40``. The extraction radius is held fixed in physical units
    so that the sequence measures discretization error only.
    """
    t0 = time.perf_counter()
    mat = Material()
    a = 1.0
    field_ = griffith_field(1.0, a, mat)
    k0 = np.sqrt(np.pi * a)
    crack = Polyline([[-a, 0.0], [a, 0.0]])
    frame = TipFrame.from_curve(crack)
    rep = SuiteReport("griffith", columns=("level", "h_tip", "K_I", "K_II", "rel_error",
                                           "K_I_2h", "K_I_4h", "K_I_6h", "K_I_dc"))
    mesh, h = graded_mesh((-10.0, -10.0, 10.0, 10.0), 25, 3, [[-a, 0.0], [a, 0.0]])
    done = 0
    for lv in sorted(levels):
        while done < lv:
            mesh = refine_uniform(mesh)
            h /= 2
            done += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = analyze(mesh, crack, mat, field_.load_shapes(), PropagationParams(threads=threads))
            sol = res.solution
            ht = tip_size(sol.fem, frame.tip)
            ks = [interaction_integral(sol, frame, f * ht, curve=crack).K_I for f in (2, 4, 6)]
            sif = interaction_integral(sol, frame, r_q, curve=crack)
        dc = displacement_correlation(sol, frame, crack, h)[0]
        rep.rows.append((lv, ht, sif.K_I, sif.K_II, sif.K_I / k0 - 1.0, *ks, dc))
    err = np.array([abs(r[4]) for r in rep.rows])
    last = rep.rows[-1]
    ks = np.array(last[5:8])
    spread = float(np.ptp(ks) / np.mean(ks))
    rep.data.update(errors=err, spread=spread, h_tip=last[1])
    rep.check("K_I accuracy", err[-1] <= 0.02,
              f"|K_I/(sigma sqrt(pi a)) - 1| = {err[-1]:.2e} (<= 2%) at h_tip = a/{a / last[1]:.0f}")
    rep.check("K_II vanishes", abs(last[3]) / last[2] <= 0.01,
              f"|K_II|/K_I = {abs(last[3]) / last[2]:.2e} (<= 1%)")
    if len(err) > 1:
        rep.check("monotone convergence", bool(np.all(np.diff(err) < 0)),
                  "errors " + ", ".join(f"{x:.2e}" for x in err))
    rep.check("domain independence", spread < 0.01,
              f"K_I spread over r_q in {{2,4,6}} h_tip: {spread:.2e} (< 1%)")
    dce = last[8] / k0 - 1.0
    rep.check("displacement-correlation cross-check", abs(dce) < 0.1,
              f"K_I(dc)/K_exact - 1 = {dce:.3f} (|.| < 10%)")
    rep.seconds = time.perf_counter() - t0
    rep.check("runtime", rep.seconds <= 120, f"{rep.seconds:.1f} s (<= 120 s)")
    return rep


def kink(level: int = 7, ratios=(0.02, 0.05, 0.1), delta: float = 0.1, r_q_factor: float = 7.0,
         threads: int = 1) -> SuiteReport:
    """Angle that zeroes K_II of a short kink versus the first-order rule.

    A straight crack of half-length 1 carries exact Dirichlet data of the
    remote stress ``[[1, r], [r, 1]]`` (K_II/K_I = r, no T-stress). A kink of
    length ``delta`` is swept over four angles around ``-2 r``; the root of
    a least-squares line through K_II/K_I locates the K_II-zeroing angle.
    """
    t0 = time.perf_counter()
    mat = Material()
    mesh, h = graded_mesh((-10.0, -10.0, 10.0, 10.0), 25, level,
                          [[-1.0, 0.0], [1.0, 0.0], [1.0 + delta, 0.0]], plateau=4.0)
    params = PropagationParams(r_q_factor=r_q_factor, threads=threads)
    rep = SuiteReport("kink", columns=("ratio", "ratio_measured", "theta_first_order",
                                       "theta_zero", "difference", "fit_residual"))
    diffs = []
    for r in ratios:
        F = GriffithField(a=1.0, far_field=np.array([[1.0, r], [r, 1.0]]), material=mat)
        shapes = F.load_shapes()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            parent = analyze(mesh, Polyline([[-1.0, 0.0], [1.0, 0.0]]), mat, shapes, params)
            th_lin = -2.0 * r
            ths = th_lin * np.array([0.8, 0.93, 1.07, 1.2])
            vals = []
            for th in ths:
                c = Polyline([[-1.0, 0.0], [1.0, 0.0],
                              [1.0 + delta * np.cos(th), delta * np.sin(th)]])
                vals.append(analyze(mesh, c, mat, shapes, params).sif.ratio)
        A = np.polyfit(ths, vals, 1)
        root = -A[1] / A[0]
        resid = float(np.abs(np.polyval(A, ths) - vals).max())
        d = abs(root - th_lin)
        diffs.append(d)
        rep.rows.append((r, parent.sif.ratio, th_lin, root, d, resid))
        tol = max(0.2 * abs(th_lin), 0.01)
        rep.check(f"kink ratio {r:g}", d <= tol,
                  f"theta_zero {root:.5f} vs -2 ratio {th_lin:.5f}: |diff| {d:.5f} (<= {tol:.3f})")
    diffs = np.array(diffs)
    rep.data["differences"] = diffs
    rep.check("discrepancy shrinks as ratio -> 0", bool(np.all(np.diff(diffs) > 0)),
              "differences " + ", ".join(f"{x:.5f}" for x in diffs) + " for increasing ratio")
    rep.seconds = time.perf_counter() - t0
    return rep


def straight_specimen(h_level: int = 4):
    """Center-cracked tension specimen symmetric about ``y = 0``."""
    box = (-2.0, -2.0, 2.0, 2.0)
    mesh, h = graded_mesh(box, 10, h_level, [[-0.5, 0.0], [1.6, 0.0]])
    path = CrackPath.create([[-0.5, 0.0], [0.5, 0.0]], delta_ell=2.0 * h)
    return mesh, path, uniaxial_shapes(box), h


def straight(n_steps: int = 20, h_level: int = 4, threads: int = 1) -> SuiteReport:
    """Symmetric mode-I growth must stay on the symmetry line."""
    t0 = time.perf_counter()
    mat = Material()
    mesh, path, shapes, h = straight_specimen(h_level)
    rec = propagate(mesh, path, mat, shapes, n_steps, PropagationParams(threads=threads))
    rep = SuiteReport("straight", columns=("step", "tip_x", "tip_y", "K_I", "K_II", "C"))
    tips = rec.path.tips
    for k, row in enumerate(rec.rows):
        rep.rows.append((k, tips[k + 1, 0], tips[k + 1, 1], row["K_I"], row["K_II"], row["C"]))
    dl = path.delta_ell
    ty = float(np.abs(tips[:, 1]).max())
    kc = np.abs(rec.column("K_I") * rec.column("C") - mat.K_c).max()
    rep.data.update(record=rec, max_tip_y=ty, kc_error=kc)
    rep.check("steps completed", len(rec.rows) == n_steps, f"{len(rec.rows)}/{n_steps} steps")
    rep.check("path stays on the symmetry line", ty <= 1e-3 * dl,
              f"max |tip_y| = {ty:.2e} (<= 1e-3 Delta_ell = {1e-3 * dl:.1e})")
    rep.check("load scale", kc <= 4 * np.finfo(float).eps * mat.K_c,
              f"max |K_I C - K_c| = {kc:.1e}")
    rep.seconds = time.perf_counter() - t0
    return rep


ARC_R = 2.0
ARC_START = -np.pi / 8
ARC_SPAN0 = np.pi / 8
ARC_GROWTH = 0.8


def arc_setup(level: int, parallel: float = 0.0):
    """Universal mesh, initial crack and load history of the arc problem at one level.

    Level ``k`` has ``h = 0.4 / 2**k`` along the path and ``Delta_ell = 2 h``.
    """
    ang = np.linspace(ARC_START, ARC_START + ARC_SPAN0 + ARC_GROWTH / ARC_R + 0.1, 60)
    feature = ARC_R * np.column_stack([np.cos(ang), np.sin(ang)])
    mesh, h = graded_mesh((0.4, -1.6, 3.6, 1.6), 8, level, feature)
    base = arc_initial_crack(ARC_R, ARC_START, ARC_SPAN0, h)
    path = CrackPath.create(base, delta_ell=2.0 * h, ell0=ARC_R * ARC_SPAN0)

    def shapes(p):
        return arc_loading_history(p.ell, ARC_R, ARC_START, parallel)

    return mesh, path, shapes, h


def arc_errors(tips):
    """(max distance of tips from the circle, max chord-angle error per step)."""
    dist = np.abs(np.linalg.norm(tips, axis=1) - ARC_R)
    d = np.diff(tips, axis=0)
    mid = 0.5 * (tips[1:] + tips[:-1])
    tang = np.column_stack([-mid[:, 1], mid[:, 0]])
    ang = np.arctan2(tang[:, 0] * d[:, 1] - tang[:, 1] * d[:, 0], (tang * d).sum(axis=1))
    return float(dist.max()), float(np.abs(ang).max())


def arc(levels=(2, 3, 4), parallel: float = 0.0, threads: int = 1) -> SuiteReport:
    """Path convergence of a crack driven along a circle by its exact loading history."""
    t0 = time.perf_counter()
    mat = Material()
    rep = SuiteReport("arc", columns=("level", "h", "step", "tip_x", "tip_y", "K_I", "K_II",
                                      "theta_k"))
    hs, dist, tang = [], [], []
    first_ratio = None
    for lv in levels:
        mesh, path, shapes, h = arc_setup(lv, parallel)
        n = int(round(ARC_GROWTH / path.delta_ell))
        rec = propagate(mesh, path, mat, shapes, n, PropagationParams(threads=threads))
        tips = rec.path.tips
        for k, row in enumerate(rec.rows):
            rep.rows.append((lv, h, k, tips[k + 1, 0], tips[k + 1, 1], row["K_I"], row["K_II"],
                             row["theta_k"]))
        dmax, amax = arc_errors(tips)
        hs.append(h)
        dist.append(dmax)
        tang.append(amax)
        first_ratio = rec.rows[0]["K_II"] / rec.rows[0]["K_I"]
    hs, dist, tang = map(np.array, (hs, dist, tang))
    rep.data.update(h=hs, distance=dist, tangent=tang)
    rep.check("exact configuration", abs(first_ratio) < 0.02,
              f"|K_II/K_I| = {abs(first_ratio):.2e} on the initial arc (< 2%)")
    if len(hs) < 2:
        rep.seconds = time.perf_counter() - t0
        return rep
    order = _order(hs, dist)
    pair = np.log2(dist[:-1] / dist[1:])
    rep.data.update(order=order, pair_orders=pair)
    rep.check("tip distance decreases", bool(np.all(np.diff(dist) < 0)),
              "max distance from circle " + ", ".join(f"{x:.3e}" for x in dist))
    rep.check("tip distance order", order >= 1.0,
              f"estimated order {order:.3f} (>= 1.0); pairwise "
              + ", ".join(f"{x:.3f}" for x in pair))
    rep.check("tangents converge", bool(np.all(np.diff(tang) < 0)),
              "max tangent-angle error " + ", ".join(f"{x:.3e}" for x in tang))
    rep.seconds = time.perf_counter() - t0
    rep.check("runtime", rep.seconds <= 300, f"{rep.seconds:.1f} s (<= 300 s)")
    return rep


def run_suite(name: str, level: int | None = None, threads: int = 1) -> SuiteReport:
    """Run a suite by CLI name; ``level`` narrows it to a single refinement level."""
    if name == "conform-fuzz":
        return conform_fuzz(levels=(0, 1, 2) if level is None else (level,))
    if name == "patch":
        return patch(n=6 if level is None else 6 * 2 ** level)
    if name == "mms":
        return mms(levels=4 if level is None else level + 2)
    if name == "griffith":
        return griffith(levels=(0, 1, 2) if level is None else (level,), threads=threads)
    if name == "kink":
        return kink(level=7 if level is None else level, threads=threads)
    if name == "straight":
        return straight(h_level=4 if level is None else level, threads=threads)
    if name == "arc":
        return arc(levels=(2, 3, 4) if level is None else (level,), threads=threads)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
