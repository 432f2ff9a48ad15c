"""Command-line entry point: ``unimesh {conform, propagate, verify, quality}``.

Exit codes: 0 success, 1 verification failure, 2 invalid input, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigError, ConformationError, MeshError, PreconditionError,
                     PropagationError, SolverError, UnimeshError)

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    from .fileio import config_help
    from .suites import SUITES

    p = argparse.ArgumentParser(prog="unimesh", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog=config_help())
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("conform", help="conform a mesh to a curve")
    c.add_argument("--mesh", required=True, help="plain-text mesh file")
    c.add_argument("--curve", required=True, help="curve file ('open'/'closed' then knots)")
    c.add_argument("--out", default="out", help="output directory (UNIMESH_OUT overrides)")
    c.add_argument("--q-min", type=float, default=0.2, help="minimum element quality")

    pr = sub.add_parser("propagate", help="run a configured crack propagation",
                        formatter_class=argparse.RawDescriptionHelpFormatter,
                        epilog=config_help())
    pr.add_argument("--config", required=True, help="key = value run configuration")
    pr.add_argument("--out", default=None, help="output directory (default: config 'out')")
    pr.add_argument("--threads", type=int, default=None, help="assembly threads (default 1)")

    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("--suite", required=True, choices=SUITES)
    v.add_argument("--level", type=int, default=None, help="single refinement level")
    v.add_argument("--threads", type=int, default=1, help="assembly threads (default 1)")
    v.add_argument("--out", default=None, help="write <suite>.csv here (UNIMESH_OUT overrides)")

    q = sub.add_parser("quality", help="print the element quality histogram of a mesh")
    q.add_argument("--mesh", required=True)
    return p


def _conform(args) -> int:
    from .conformer import ConformParams, conform, split_crack
    from .curves import read_curve
    from .fileio import output_dir, write_vtk
    from .geometry import read_mesh

    mesh = read_mesh(args.mesh)
    curve = read_curve(args.curve)
    cm = conform(mesh, curve, ConformParams(q_min=args.q_min))
    if not curve.closed:
        cm = split_crack(cm)
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cm.write(out / "conformed.mesh", out / "conformed.json")
    write_vtk(cm, out / "conformed.vtk")
    print(f"min quality: {cm.min_quality:.6f}")
    print(f"max boundary deviation: {cm.boundary_deviation():.3e}")
    print(f"wrote {out / 'conformed.mesh'}, {out / 'conformed.json'}, {out / 'conformed.vtk'}")
    return EXIT_OK


def _propagate(args) -> int:
    from .fileio import parse_config, run_propagation

    cfg = parse_config(args.config)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be positive")
        cfg.threads = args.threads

    def show(k, path, res):
        print(f"step {k}: ell={path.ell:.6f} tip=({path.tip[0]:.6f}, {path.tip[1]:.6f}) "
              f"K_I={res.sif.K_I:.6g} K_II={res.sif.K_II:.3e}", flush=True)

    man = run_propagation(cfg, out=args.out, on_step=show)
    print(f"status: {man.status}")
    return EXIT_OK


def _verify(args) -> int:
    from .fileio import atomic_write_text
    from .suites import run_suite
    import os

    rep = run_suite(args.suite, level=args.level, threads=args.threads)
    for line in rep.lines():
        print(line)
    print(f"{rep.suite}: {'PASS' if rep.passed else 'FAIL'} ({rep.seconds:.1f} s)")
    out = os.environ.get("UNIMESH_OUT") or args.out
    if out:
        atomic_write_text(Path(out) / f"{rep.suite}.csv", rep.to_csv())
    return EXIT_OK if rep.passed else EXIT_VERIFY


def _quality(args) -> int:
    from .geometry import quality_report, read_mesh

    mesh = read_mesh(args.mesh)
    print(quality_report(mesh.vertices, mesh.triangles).format())
    return EXIT_OK


def _diagnose(exc: UnimeshError) -> str:
    if isinstance(exc, PropagationError):
        return f"numerical failure in stage '{exc.stage}': {exc}"
    if isinstance(exc, SolverError):
        last = f" (last residual {exc.residuals[-1]:.3e})" if exc.residuals else ""
        return f"numerical failure in stage 'solve': {exc}{last}"
    if isinstance(exc, ConformationError):
        return f"numerical failure in stage 'conform': {exc} (triangles {exc.triangles[:10]})"
    return f"numerical failure: {exc}"


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = _parser().parse_args(argv)
    handlers = {"conform": _conform, "propagate": _propagate, "verify": _verify,
                "quality": _quality}
    with np.errstate(all="ignore"):
        try:
            return handlers[args.command](args)
        except PropagationError as exc:
            if isinstance(exc.cause, (ConfigError, MeshError)):
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_INPUT
            print(f"error: {_diagnose(exc)}", file=sys.stderr)
            return EXIT_NUMERIC
        except (SolverError, ConformationError) as exc:
            print(f"error: {_diagnose(exc)}", file=sys.stderr)
            return EXIT_NUMERIC
        except (ConfigError, PreconditionError, MeshError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        except UnimeshError as exc:
            print(f"error: {_diagnose(exc)}", file=sys.stderr)
            return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
