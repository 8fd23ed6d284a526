"""Command-line front end.

Every failure prints one line ``gpcspline: error[<code>]: <message>`` on
stderr.  Exit codes: 0 success, 1 validation failure, 2 numeric failure.
A ``--config`` file holds flat ``key = value`` lines; flags given on the
command line override it.  ``GPCSPLINE_VERBOSE=1`` enables progress logs.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

log = logging.getLogger("gpcspline")


class ValidationFailure(Exception):
    """A check ran and failed (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationFailure(f"usage: {message}")


def _fracs(text):
    return [Fraction(x) for x in str(text).replace(",", " ").split()]


def _triple(text):
    vals = [float(x) for x in str(text).replace(",", " ").split()]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}")
    return vals


def _load_samples(path):
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] < 4:
        raise ValueError(f"{path}: need columns u v w followed by target values")
    from .fitting import SampleSet

    return SampleSet(data[:, :3], data[:, 3:])


def _regular(args):
    from .control_grid import add_boundary_layer, build_regular

    knots = [_fracs(getattr(args, f"knots_{a}")) for a in "uvw"]
    g = add_boundary_layer(build_regular(*knots))
    return g


# -- subcommands -----------------------------------------------------------------


def cmd_init(args):
    from .control_grid import identity_layout
    from .spline_eval import ComponentSpline, save_spline

    g = identity_layout(_regular(args))
    save_spline(ComponentSpline(g, args.form), args.out)
    print(f"wrote {args.out}: {len(g.points)} control points")


def cmd_param_surface(args):
    from .mesh_io import PatchAnnotation, load_mesh
    from .param import cube_surface_param

    mesh = load_mesh(args.mesh)
    sp_ = cube_surface_param(mesh, PatchAnnotation.load(args.annotation), args.patch, args.weighting)
    np.savetxt(args.out, np.column_stack([sp_.uvw, sp_.vertex_face]), fmt="%.17g")
    print(f"wrote {args.out}: {len(mesh.vertices)} vertices")


def cmd_param_volume(args):
    from .mesh_io import PatchAnnotation, export_vtk, load_mesh
    from .param import bent_tube_lattice, build_hex_grid, cube_surface_param, volumetric_relax

    res = tuple(int(x) for x in args.resolution)
    if args.synthetic == "bent-tube":
        if len(set(res)) != 1:
            raise ValueError("the bent-tube lattice is cubic: give equal resolutions")
        grid = bent_tube_lattice(res[0])
    else:
        if not (args.mesh and args.annotation):
            raise ValueError("param-volume needs --mesh and --annotation (or --synthetic)")
        sp_ = cube_surface_param(load_mesh(args.mesh), PatchAnnotation.load(args.annotation),
                                 args.patch, args.weighting)
        grid = build_hex_grid(sp_, res)
    out = volumetric_relax(grid, args.relax_threshold, args.max_iters)
    export_vtk(out.positions, args.out)
    print(f"sweeps {out.sweeps} converged {out.converged} energy {out.energy_log[-1]:.12g}")
    if not out.converged:
        raise ArithmeticError(f"relaxation did not converge in {args.max_iters} sweeps")


def cmd_fit_gpc(args):
    from .control_grid import add_boundary_layer, build_regular
    from .fitting import hierarchical_fit, rms
    from .spline_eval import ComponentSpline, save_spline

    samples = _load_samples(args.samples)
    lo, hi = samples.params.min(axis=0), samples.params.max(axis=0)
    n = args.intervals
    S = [[Fraction(lo[a]).limit_denominator(10**9) + (Fraction(hi[a]).limit_denominator(10**9)
          - Fraction(lo[a]).limit_denominator(10**9)) * Fraction(i, n) for i in range(n + 1)]
         for a in range(3)]
    g = add_boundary_layer(build_regular(*S))
    for p in g.points.values():
        p.payload = np.zeros(samples.targets.shape[1])
    spline = ComponentSpline(g, args.form)
    spline, report = hierarchical_fit(samples, spline, args.threshold, args.max_levels)
    save_spline(spline, args.out)
    print(report.format())
    print(f"rms {rms(spline, samples):.6e}")


def cmd_fit_component(args):
    from .fitting import boundary_fit, interior_fit
    from .spline_eval import ComponentSpline, save_spline

    samples = _load_samples(args.samples)
    g = _regular(args)
    for p in g.points.values():
        p.payload = np.zeros(samples.targets.shape[1])
    spline = ComponentSpline(g, "semi-standard")
    _, r1 = boundary_fit(samples, spline)
    _, r2 = interior_fit(spline, args.lattice)
    save_spline(spline, args.out)
    print(f"boundary residual {r1.residual:.3e} interior harmonicity {r2.residual:.3e}")


def cmd_refine(args):
    from .control_grid import subdivide_cells
    from .spline_eval import load_spline, save_spline

    spline = load_spline(args.archive)
    _, rlog = subdivide_cells(spline.grid, args.cells)
    save_spline(spline, args.out)
    print(f"wrote {args.out}: {len(spline.grid.points)} control points, {len(rlog)} splits")


def cmd_merge(args):
    from .merging import InterfaceSpec, merge_typed, pattern_components
    from .spline_eval import save_spline

    pattern, n = args.pattern, args.intervals
    if args.spec:
        doc = json.loads(Path(args.spec).read_text())
        pattern = doc.get("pattern", pattern)
        n = int(doc.get("intervals", n))
    if pattern is None:
        raise ValueError("merge needs --pattern or --spec")
    comps = pattern_components(pattern, n)
    merged, rep = merge_typed(InterfaceSpec(comps, pattern), n_samples=args.samples, seed=args.seed)
    save_spline(merged, args.out)
    print(f"merged {pattern}: {len(merged.grid.points)} control points, unity {rep.unity:.3e}, "
          f"boundary violations {rep.violations}")


def cmd_eval(args):
    from .spline_eval import evaluate, load_spline

    spline = load_spline(args.archive)
    pts = [args.at] if args.at else []
    if args.params:
        pts += np.loadtxt(args.params, ndmin=2)[:, :3].tolist()
    if not pts:
        raise ValueError("eval needs --at or --params")
    vals = evaluate(spline, np.array(pts, float)).value
    for p, v in zip(pts, vals):
        print(" ".join(f"{x:.17g}" for x in list(p) + list(v)))


def cmd_audit(args):
    from .gpc import ill_point_census, load_graph
    from .spline_eval import audit_boundary_restriction, audit_unity, load_spline

    failed = []
    if args.archive:
        spline = load_spline(args.archive)
        dev = audit_unity(spline, args.samples, args.seed)
        print(f"unity deviation {dev:.3e}")
        if dev > args.tol:
            failed.append(f"unity deviation {dev:.3e} exceeds {args.tol:g}")
        viol = audit_boundary_restriction(spline, seed=args.seed)
        print(f"boundary violations {len(viol)}")
        for v in viol[:10]:
            print(f"  {v.reason} at {list(v.parameter) if v.parameter is not None else '-'}")
        if viol and spline.grid.layered:
            failed.append(f"{len(viol)} boundary-restriction violations")
    if args.graph:
        census = ill_point_census(load_graph(args.graph))
        print("census " + " ".join(f"{k}={v}" for k, v in census.counts.items())
              + f" singular={census.singular} unclassified={census.unclassified}")
    if not (args.archive or args.graph):
        raise ValueError("audit needs --archive and/or --graph")
    if failed:
        raise ValidationFailure("; ".join(failed))


def cmd_weights_table(args):
    from .merging import PATTERNS, compute_merge_weights, lookup_weights

    pats = [args.pattern] if args.pattern else list(PATTERNS)
    for p in pats:
        oracle = compute_merge_weights(p)
        table = lookup_weights(p)
        print(f"{p}  slot  oracle  table")
        for s in range(1, 28):
            a, b = oracle.slot(s), table.slot(s)
            if a is None and b is None:
                continue
            mark = "" if a == b else "  MISMATCH"
            print(f"  {s:2d}  {'-' if a is None else a}  {'-' if b is None else b}{mark}")
        print(f"  match: {'yes' if oracle == table else 'no'}")


def cmd_export_vtk(args):
    from .mesh_io import export_vtk
    from .param import lattice_params
    from .spline_eval import evaluate, load_spline

    spline = load_spline(args.archive)
    dom = spline.grid.domain
    lo = np.array([float(x) for x in dom.lo])
    hi = np.array([float(x) for x in dom.hi])
    res = tuple(int(x) for x in args.resolution)
    P = lo + lattice_params(res).reshape(-1, 3) * (hi - lo)
    inside = dom.contains(P)
    if not inside.all():
        raise ValueError("export-vtk needs a box-shaped domain")
    vals = evaluate(spline, P).value
    export_vtk(vals.reshape(res + (vals.shape[1],)), args.out)
    print(f"wrote {args.out}")


# -- parser ------------------------------------------------------------------------


def _add_knots(p):
    for a in "uvw":
        p.add_argument(f"--knots-{a}", default="0 1", help=f"knot lines along {a}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gpcspline", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="flat key = value file; flags override it")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="layered grid archive with identity payloads")
    _add_knots(p)
    p.add_argument("--form", choices=("semi-standard", "rational"), default="semi-standard")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    for name, func in (("param-surface", cmd_param_surface), ("param-volume", cmd_param_volume)):
        p = sub.add_parser(name)
        p.add_argument("--mesh", required=name == "param-surface")
        p.add_argument("--annotation", required=name == "param-surface")
        p.add_argument("--patch", type=int, default=0)
        p.add_argument("--weighting", choices=("mean-value", "uniform"), default="mean-value")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
        if name == "param-volume":
            p.add_argument("--resolution", nargs=3, type=int, default=[16, 16, 16])
            p.add_argument("--relax-threshold", type=float, default=None)
            p.add_argument("--max-iters", type=int, default=10000)
            p.add_argument("--synthetic", choices=("bent-tube",))

    p = sub.add_parser("fit-gpc", help="hierarchical least-squares fit of one cuboid")
    p.add_argument("--samples", required=True, help="text file: u v w target...")
    p.add_argument("--intervals", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.005)
    p.add_argument("--max-levels", type=int, default=3)
    p.add_argument("--form", choices=("semi-standard", "rational"), default="rational")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_gpc)

    p = sub.add_parser("fit-component", help="boundary then interior-harmonic fit")
    p.add_argument("--samples", required=True, help="surface samples: u v w target...")
    _add_knots(p)
    p.add_argument("--lattice", nargs=3, type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_component)

    p = sub.add_parser("refine", help="subdivide cells of an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--cells", nargs="+", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("merge", help="merge the components of a typed pattern")
    p.add_argument("--pattern", choices=("type-1", "type-2", "type-3", "type-4"))
    p.add_argument("--spec", help="JSON interface spec with 'pattern' and 'intervals'")
    p.add_argument("--intervals", type=int, default=2)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval", help="evaluate an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--at", type=_triple)
    p.add_argument("--params", help="text file of u v w rows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="unity, boundary restriction and ill-point census")
    p.add_argument("--archive")
    p.add_argument("--graph")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("weights-table", help="merge weights: oracle next to the constants")
    p.add_argument("--pattern", choices=("type-1", "type-2", "type-3", "type-4"))
    p.set_defaults(func=cmd_weights_table)

    p = sub.add_parser("export-vtk", help="sample an archive on a lattice and write VTK")
    p.add_argument("--archive", required=True)
    p.add_argument("--resolution", nargs=3, type=int, default=[8, 8, 8])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_vtk)
    return ap


def _config_defaults(path) -> dict:
    cp = configparser.ConfigParser()
    cp.read_string("[root]\n" + Path(path).read_text())
    return {k.replace("-", "_"): v for k, v in cp["root"].items()}


def _apply_config(ap, argv, args):
    """Re-parse with config values as defaults so explicit flags win."""
    if not args.config:
        return args
    values = _config_defaults(args.config)
    sub = ap._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    conv = {}
    for k, v in values.items():
        if k not in known:
            raise ValueError(f"unknown config key {k!r}")
        act = known[k]
        if act.nargs in ("+", 3):
            conv[k] = [act.type(x) if act.type else x for x in v.replace(",", " ").split()]
        else:
            conv[k] = act.type(v) if act.type else v
    sub.set_defaults(**conv)
    return ap.parse_args(argv)


def run(argv=None) -> int:
    logging.basicConfig(level=logging.INFO if os.environ.get("GPCSPLINE_VERBOSE") else logging.WARNING,
                        format="%(message)s")
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    except ValidationFailure as e:
        print(f"gpcspline: error[validation]: {e}", file=sys.stderr)
        return 1
    try:
        args = _apply_config(ap, argv, args)
        args.func(args)
    except ValidationFailure as e:
        print(f"gpcspline: error[validation]: {e}", file=sys.stderr)
        return 1
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"gpcspline: error[numeric]: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as e:
        msg = str(e).replace("\n", " ")
        print(f"gpcspline: error[validation]: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
