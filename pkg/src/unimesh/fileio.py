"""Run configuration, VTK export, manifests and the propagation driver."""
from __future__ import annotations

import json
import os
import platform
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, PreconditionError
from .geometry import Triangulation, quality_array

# ---------------------------------------------------------------- atomic writes


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- VTK


def _g(v) -> str:
    return "%.17g" % v


def _vertex_min(n_points, cells, cell_values):
    out = np.full(n_points, np.inf)
    for j in range(cells.shape[1]):
        np.minimum.at(out, cells[:, j], cell_values)
    out[~np.isfinite(out)] = 0.0
    return out


P2_SUBDIVISION = ((0, 3, 5), (3, 1, 4), (5, 4, 2), (3, 4, 5))


def vtk_arrays(obj):
    """Points, triangles, optional displacement and per-point quality for ``obj``.

    Accepts a ``Triangulation``, a ``ConformedMesh`` or a ``FemSolution``;
    a solution is written on all quadratic nodes with every element split
    into four linear sub-triangles.
    """
    from .conformer import ConformedMesh
    from .elasticity import FemSolution

    if isinstance(obj, FemSolution):
        fem = obj.fem
        q = quality_array(fem.points, fem.triangles)
        cells = np.vstack([fem.elements[:, list(s)] for s in P2_SUBDIVISION])
        cq = np.tile(q, len(P2_SUBDIVISION))
        return fem.nodes, cells, np.asarray(obj.u), _vertex_min(fem.n_nodes, cells, cq)
    if isinstance(obj, ConformedMesh):
        pts, tris = obj.positions, obj.triangles
    elif isinstance(obj, Triangulation):
        pts, tris = obj.vertices, obj.triangles
    else:
        raise PreconditionError(f"cannot export {type(obj).__name__} to VTK")
    q = quality_array(pts, tris)
    return pts, tris, None, _vertex_min(len(pts), tris, q)


def vtk_text(points, triangles, displacement=None, quality=None, title: str = "unimesh") -> str:
    """Legacy ASCII 3.0 unstructured grid; sections in the order points, cells, types, data."""
    points = np.asarray(points, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    n, m = len(points), len(triangles)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [f"{_g(x)} {_g(y)} 0" for x, y in points.tolist()]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {a} {b} {c}" for a, b, c in triangles.tolist()]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m
    if displacement is not None or quality is not None:
        out.append(f"POINT_DATA {n}")
        if displacement is not None:
            out.append("VECTORS displacement double")
            out += [f"{_g(x)} {_g(y)} 0" for x, y in np.asarray(displacement, float).tolist()]
        if quality is not None:
            out += ["SCALARS quality double 1", "LOOKUP_TABLE default"]
            out += [_g(v) for v in np.asarray(quality, float).tolist()]
    return "\n".join(out) + "\n"


def write_vtk(obj, path, quality: bool = True) -> None:
    """Export a mesh, conformed mesh or solution as legacy VTK."""
    pts, tris, disp, q = vtk_arrays(obj)
    try:
        atomic_write_text(path, vtk_text(pts, tris, disp, q if quality else None))
    except OSError as exc:
        raise PreconditionError(f"cannot write {path}: {exc}") from exc


@dataclass
class VtkData:
    points: np.ndarray
    triangles: np.ndarray
    cell_types: np.ndarray
    displacement: np.ndarray | None = None
    quality: np.ndarray | None = None


def read_vtk(path) -> VtkData:
    """Parse files written by ``write_vtk`` (triangle cells only)."""
    toks = Path(path).read_text().split("\n")
    if not toks or not toks[0].startswith("# vtk DataFile Version"):
        raise PreconditionError(f"{path}: not a legacy VTK file")
    if toks[2].strip() != "ASCII" or toks[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise PreconditionError(f"{path}: expected ASCII UNSTRUCTURED_GRID")
    i = 4
    data = {}
    while i < len(toks):
        head = toks[i].split()
        i += 1
        if not head:
            continue
        if head[0] == "POINTS":
            n = int(head[1])
            data["points"] = np.array([[float(v) for v in toks[i + k].split()[:2]] for k in range(n)])
            i += n
        elif head[0] == "CELLS":
            m = int(head[1])
            rows = [[int(v) for v in toks[i + k].split()] for k in range(m)]
            if any(r[0] != 3 for r in rows):
                raise PreconditionError(f"{path}: only triangle cells are supported")
            data["triangles"] = np.array([r[1:] for r in rows], dtype=np.int64).reshape(-1, 3)
            i += m
        elif head[0] == "CELL_TYPES":
            m = int(head[1])
            data["cell_types"] = np.array([int(toks[i + k]) for k in range(m)])
            i += m
        elif head[0] == "POINT_DATA":
            n = int(head[1])
        elif head[0] == "VECTORS":
            data[head[1]] = np.array([[float(v) for v in toks[i + k].split()[:2]] for k in range(n)])
            i += n
        elif head[0] == "SCALARS":
            i += 1  # lookup table line
            data[head[1]] = np.array([float(toks[i + k]) for k in range(n)])
            i += n
        else:
            raise PreconditionError(f"{path}: unexpected section {head[0]!r}")
    return VtkData(data["points"], data["triangles"], data["cell_types"],
                   data.get("displacement"), data.get("quality"))


# ---------------------------------------------------------------- configuration


def _positive(name):
    def check(v):
        if not v > 0:
            raise ConfigError(f"{name} must be positive (got {v})")
    return check


def _nonneg(name):
    def check(v):
        if v < 0:
            raise ConfigError(f"{name} must be >= 0 (got {v})")
    return check


def _choice(name, options):
    def check(v):
        if v not in options and not (v.startswith("file:") and "file:" in options):
            raise ConfigError(f"{name} must be one of {', '.join(options)} (got {v!r})")
    return check


def _open_interval(name, lo, hi):
    def check(v):
        if not lo < v < hi:
            raise ConfigError(f"{name} out of range ({lo:g}, {hi:g})")
    return check


def _nu_range(v):
    if not -1.0 < v < 0.5:
        raise ConfigError("nu out of range (-1, 0.5)")


def _bbox(v):
    if len(v) != 4 or not (v[2] > v[0] and v[3] > v[1]):
        raise ConfigError("bbox must be 'xmin ymin xmax ymax' with xmax > xmin and ymax > ymin")


def _floats(text):
    return tuple(float(t) for t in text.split())


# key: (parser, default, validator, help); default None = required, "" = derived
CONFIG_KEYS = {
    "problem": (str, None, None, "run name, used in the manifest"),
    "mesh": (str, None, _choice("mesh", ("lattice", "graded", "file:")),
             "lattice | graded | file:<path> (plain-text mesh)"),
    "bbox": (_floats, "0 0 1 1", _bbox, "generator box 'xmin ymin xmax ymax'"),
    "n": (int, "16", _positive("n"), "lattice columns"),
    "levels": (int, "3", _nonneg("levels"), "graded: red refinement levels around the feature"),
    "plateau": (float, "6", _positive("plateau"), "graded: fine band half-width in fine element sizes"),
    "feature": (str, "auto", None,
                "graded: polyline 'x y; x y; ...' to refine around; auto = crack plus its expected growth"),
    "refine": (int, "0", _nonneg("refine"), "uniform refinements applied after generation"),
    "crack": (str, "auto", None,
              "initial crack knots 'x y; x y; ...' or file:<curve>; auto = load default"),
    "E": (float, "1", _positive("E"), "Young's modulus"),
    "nu": (float, "0.3", _nu_range, "Poisson ratio in (-1, 0.5)"),
    "mode": (str, "plane_strain", _choice("mode", ("plane_strain", "plane_stress")),
             "plane_strain | plane_stress"),
    "K_c": (float, "1", _positive("K_c"), "fracture toughness"),
    "load": (str, None, _choice("load", ("griffith", "arc", "uniaxial", "file:")),
             "griffith | arc | uniaxial | file:<path> (affine Dirichlet 'A = a11 a12 a21 a22', 'b = b1 b2')"),
    "sigma": (float, "1", None, "remote stress of the griffith and uniaxial loads"),
    "arc_radius": (float, "2", _positive("arc_radius"), "arc: circle radius"),
    "arc_start": (float, repr(-np.pi / 8), None, "arc: polar angle of the fixed start tip"),
    "arc_span": (float, repr(np.pi / 8), _positive("arc_span"), "arc: initial angular span"),
    "arc_parallel": (float, "0", None, "arc: remote stress along the crack at the end tip"),
    "delta_ell": (float, "", _positive("delta_ell"), "growth increment; default 2 h (fine mesh size)"),
    "n_steps": (int, "10", _nonneg("n_steps"), "propagation steps"),
    "r_q_factor": (float, "4", _positive("r_q_factor"), "SIF domain radius in tip element sizes"),
    "q_min": (float, "0.2", _open_interval("q_min", 0.0, 1.0), "minimum conformed element quality"),
    "seed": (int, "0", None, "random seed for randomized suites"),
    "solver": (str, "pcg", _choice("solver", ("pcg", "direct")), "pcg | direct"),
    "tol": (float, "1e-10", _positive("tol"), "relative residual tolerance of pcg"),
    "threads": (int, "1", _positive("threads"), "assembly threads (1 = sequential, reproducible)"),
    "vtk": (int, "1", None, "write per-step VTK files (0 or 1)"),
    "out": (str, "out", None, "output directory (UNIMESH_OUT overrides)"),
}


@dataclass
class RunConfig:
    problem: str
    mesh: str
    load: str
    bbox: tuple = (0.0, 0.0, 1.0, 1.0)
    n: int = 16
    levels: int = 3
    plateau: float = 6.0
    feature: str = "auto"
    refine: int = 0
    crack: str = "auto"
    E: float = 1.0
    nu: float = 0.3
    mode: str = "plane_strain"
    K_c: float = 1.0
    sigma: float = 1.0
    arc_radius: float = 2.0
    arc_start: float = -np.pi / 8
    arc_span: float = np.pi / 8
    arc_parallel: float = 0.0
    delta_ell: float | None = None
    n_steps: int = 10
    r_q_factor: float = 4.0
    q_min: float = 0.2
    seed: int = 0
    solver: str = "pcg"
    tol: float = 1e-10
    threads: int = 1
    vtk: int = 1
    out: str = "out"
    base_dir: str = field(default=".", repr=False, compare=False)

    def to_text(self) -> str:
        """Canonical ``key = value`` text; parsing it gives back an equal config."""
        lines = []
        for k in CONFIG_KEYS:
            v = getattr(self, k)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = " ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}

    def resolve(self, ref: str) -> Path:
        p = Path(ref[len("file:"):] if ref.startswith("file:") else ref)
        return p if p.is_absolute() else Path(self.base_dir) / p


def config_help() -> str:
    """Every key with its default, as listed by ``--help``."""
    out = ["configuration keys (key = value, '#' starts a comment):"]
    for k, (_, default, _, doc) in CONFIG_KEYS.items():
        d = "required" if default is None else ("derived" if default == "" else f"default {default}")
        out.append(f"  {k:<13} {doc} [{d}]")
    return "\n".join(out)


def parse_config_text(text: str, base_dir=".") -> RunConfig:
    """Parse the line-oriented configuration format.

    Raises:
        ConfigError: unknown or duplicate key, missing required key,
            unparsable or out-of-range value; the message names the key.
    """
    seen = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not eq or not key:
            raise ConfigError(f"line {no}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        seen[key] = val
    values = {}
    for key, (parse, default, check, _) in CONFIG_KEYS.items():
        if key not in seen:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            if default == "":
                continue
            raw = default
        else:
            raw = seen[key]
        try:
            v = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from exc
        if check is not None:
            check(v)
        values[key] = v
    cfg = RunConfig(**values, base_dir=str(base_dir))
    for key in ("mesh", "load", "crack"):
        ref = getattr(cfg, key)
        if ref.startswith("file:") and not cfg.resolve(ref).exists():
            raise ConfigError(f"{key}: file {cfg.resolve(ref)} does not exist")
    if cfg.vtk not in (0, 1):
        raise ConfigError("vtk must be 0 or 1")
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), base_dir=path.parent)


def _points(text):
    try:
        pts = [tuple(float(t) for t in chunk.split()) for chunk in text.split(";") if chunk.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse point list {text!r}") from exc
    if len(pts) < 2 or any(len(p) != 2 for p in pts):
        raise ConfigError(f"point list {text!r} needs at least two 'x y' pairs")
    return np.array(pts)


# ---------------------------------------------------------------- run setup


@dataclass
class RunSetup:
    mesh: Triangulation
    path: object
    material: object
    shapes: object
    params: object
    h: float


def _initial_crack(cfg: RunConfig, h: float) -> np.ndarray:
    from .curves import read_curve
    from .problems import arc_initial_crack

    if cfg.crack == "auto":
        if cfg.load == "arc":
            return arc_initial_crack(cfg.arc_radius, cfg.arc_start, cfg.arc_span, h)
        return np.array([[-1.0, 0.0], [1.0, 0.0]])
    if cfg.crack.startswith("file:"):
        return np.asarray(read_curve(cfg.resolve(cfg.crack)).knots)
    return _points(cfg.crack)


def _auto_feature(cfg: RunConfig, knots, growth: float):
    if cfg.load == "arc":
        R = cfg.arc_radius
        end = cfg.arc_start + cfg.arc_span + growth / R
        ang = np.linspace(cfg.arc_start, end + 2.0 * growth / (R * max(cfg.n_steps, 1)), 64)
        return R * np.column_stack([np.cos(ang), np.sin(ang)])
    t = knots[-1] - knots[-2]
    t = t / np.linalg.norm(t)
    return np.vstack([knots, knots[-1] + growth * t])


def _affine_load(path):
    vals = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        k, _, v = line.partition("=")
        vals[k.strip()] = _floats(v)
    if set(vals) - {"A", "b"} or len(vals.get("A", ())) != 4 or len(vals.get("b", ())) != 2:
        raise ConfigError(f"load file {path}: needs 'A = a11 a12 a21 a22' and 'b = b1 b2'")
    A = np.array(vals["A"]).reshape(2, 2)
    b = np.array(vals["b"])
    return A, b


def build_run(cfg: RunConfig) -> RunSetup:
    """Mesh, crack path, material, load shapes and loop controls of a configuration."""
    from .conformer import ConformParams
    from .curves import CrackPath
    from .elasticity import LoadShapes, Material
    from .exact import GriffithField, arc_loading_history
    from .fracture import PropagationParams
    from .geometry import read_mesh, refine_uniform, structured_acute_mesh
    from .problems import graded_mesh, uniaxial_shapes

    material = Material(E=cfg.E, nu=cfg.nu, mode=cfg.mode, K_c=cfg.K_c)
    if cfg.mesh == "graded":
        h = (cfg.bbox[2] - cfg.bbox[0]) / cfg.n / 2 ** cfg.levels / 2 ** cfg.refine
    elif cfg.mesh == "lattice":
        h = structured_acute_mesh(cfg.bbox, cfg.n).h_max / 2 ** cfg.refine
    else:
        mesh = read_mesh(cfg.resolve(cfg.mesh))
        for _ in range(cfg.refine):
            mesh = refine_uniform(mesh)
        h = mesh.h_max
    knots = _initial_crack(cfg, h)
    delta = cfg.delta_ell if cfg.delta_ell is not None else 2.0 * h
    if cfg.mesh == "graded":
        feature = (_auto_feature(cfg, knots, cfg.n_steps * delta) if cfg.feature == "auto"
                   else _points(cfg.feature))
        mesh, _ = graded_mesh(cfg.bbox, cfg.n, cfg.levels, feature, plateau=cfg.plateau)
        for _ in range(cfg.refine):
            mesh = refine_uniform(mesh)
    elif cfg.mesh == "lattice":
        mesh = structured_acute_mesh(cfg.bbox, cfg.n)
        for _ in range(cfg.refine):
            mesh = refine_uniform(mesh)
    ell0 = cfg.arc_radius * cfg.arc_span if (cfg.load == "arc" and cfg.crack == "auto") else None
    path = CrackPath.create(knots, delta_ell=delta, ell0=ell0)

    if cfg.load == "griffith":
        a_vec = knots[-1] - knots[0]
        shapes = GriffithField(a=0.5 * float(np.linalg.norm(a_vec)),
                               far_field=_rotated_tension(cfg.sigma, a_vec), material=material,
                               center=0.5 * (knots[0] + knots[-1]),
                               beta=float(np.arctan2(a_vec[1], a_vec[0]))).load_shapes()
    elif cfg.load == "uniaxial":
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        shapes = uniaxial_shapes((lo[0], lo[1], hi[0], hi[1]), cfg.sigma)
    elif cfg.load == "arc":
        R, start, par = cfg.arc_radius, cfg.arc_start, cfg.arc_parallel

        def shapes(p):
            return arc_loading_history(p.ell, R, start, par, material)
    else:
        A, b = _affine_load(cfg.resolve(cfg.load))
        shapes = LoadShapes(g_bar=lambda x: x @ A.T + b)
    params = PropagationParams(conform=ConformParams(q_min=cfg.q_min), r_q_factor=cfg.r_q_factor,
                               tol=cfg.tol, solver=cfg.solver, threads=cfg.threads)
    return RunSetup(mesh, path, material, shapes, params, h)


def _rotated_tension(sigma, along):
    t = np.asarray(along, float) / np.linalg.norm(along)
    n = np.array([-t[1], t[0]])
    return sigma * np.outer(n, n)


# ---------------------------------------------------------------- manifest and driver


def versions() -> dict:
    import scipy

    from . import __version__
    return {"unimesh": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    config: dict
    versions: dict
    artifacts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "versions": self.versions,
                           "artifacts": self.artifacts, "timings": self.timings,
                           "status": self.status}, indent=1, default=_json_default) + "\n"

    def write(self, path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(d["config"], d["versions"], d["artifacts"], d["timings"], d["status"])


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


def output_dir(default) -> Path:
    return Path(os.environ.get("UNIMESH_OUT") or default)


def run_propagation(cfg: RunConfig, out=None, on_step=None) -> RunManifest:
    """Execute a configured propagation and persist CSV, VTK and the manifest.

    Outputs go to ``out`` (or ``cfg.out``, overridden by ``UNIMESH_OUT``):
    ``config.txt``, ``record.csv``, ``path.csv``, ``step_XXX.vtk`` and
    ``manifest.json``, the last one written even when the run fails.

    Raises:
        PropagationError: after the partial record and manifest are written.
    """
    from .curves import write_crack_path
    from .errors import PropagationError
    from .fracture import propagate

    out = output_dir(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest = RunManifest(cfg.to_dict(), versions())
    atomic_write_text(out / "config.txt", cfg.to_text())
    manifest.artifacts.append("config.txt")
    setup = build_run(cfg)
    manifest.timings["setup"] = time.perf_counter() - t0
    step_times = []
    last = [time.perf_counter()]

    def hook(k, path, res):
        if cfg.vtk:
            name = f"step_{k:03d}.vtk"
            write_vtk(res.solution, out / name)
            manifest.artifacts.append(name)
        now = time.perf_counter()
        step_times.append(now - last[0])
        last[0] = now
        if on_step is not None:
            on_step(k, path, res)

    setup.params.on_step = hook
    rec = None
    try:
        rec = propagate(setup.mesh, setup.path, setup.material, setup.shapes, cfg.n_steps,
                        setup.params)
    except PropagationError as exc:
        rec = exc.record
        manifest.status = f"failed at step {exc.step} [{exc.stage}]: {exc.cause}"
        raise
    finally:
        if rec is not None:
            atomic_write_text(out / "record.csv", rec.to_csv())
            write_crack_path(rec.path, out / "path.csv")
            manifest.artifacts += ["record.csv", "path.csv"]
        manifest.timings["steps"] = step_times
        manifest.timings["total"] = time.perf_counter() - t0
        manifest.write(out / "manifest.json")
    return manifest
