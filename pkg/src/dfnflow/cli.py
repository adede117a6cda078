"""Command-line driver wiring geometry, meshing, solvers, and reports.

Subcommands: ``trace`` (geometry only), ``mesh``, ``solve``,
``convergence`` (manufactured-solution sweep), ``sweep`` (angle,
sliding and shrinking families), ``upscale``.  A JSON config file can
preload any flag; explicit flags win.  Exit codes: 0 success, 2 solver
non-convergence, 3 geometry or meshing failure.

Independent runs of a sweep are dispatched over a thread pool when
DFN_THREADS is set above 1; rows are still emitted in configuration
order, so reports stay byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import bench
from .errors import (
    DegenerateFracture,
    DfnError,
    FloatingFracture,
    GeometryMismatch,
    MeshFailure,
    NoBoundaryContact,
    NotConverged,
    OffFracture,
    OffPlane,
    OverlapError,
    ParseError,
    UnsupportedVersion,
    ZeroDistance,
)
from .geometry import dump_network, load_network
from .meshing import triangulate_network
from .meshing.io import export_vtk
from .post import BenchReport, boundary_flux, error_norms, sample_line
from .solution import nodal_p0_means

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_GEOMETRY = 3

_GEOMETRY_ERRORS = (
    DegenerateFracture,
    OverlapError,
    OffPlane,
    OffFracture,
    GeometryMismatch,
    NoBoundaryContact,
    MeshFailure,
    ZeroDistance,
    FloatingFracture,
    ParseError,
    UnsupportedVersion,
)

_METHODS = tuple(bench.METHOD_CONFORMITY)
_FAMILIES = ("angle", "sliding", "shrinking")


def _pmap(fn, items):
    """Map preserving order; threads when DFN_THREADS > 1."""
    items = list(items)
    n = int(os.environ.get("DFN_THREADS", "1") or "1")
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _out(args, name):
    path = getattr(args, name, None)
    if path is None:
        return None
    if os.path.isabs(path):
        return path
    return os.path.join(args.out_dir, path)


def _methods_arg(value):
    if value in ("all", None):
        return list(_METHODS)
    names = [m.strip() for m in value.split(",") if m.strip()]
    for m in names:
        if m not in _METHODS:
            raise argparse.ArgumentTypeError(
                f"unknown method {m!r} (choose from {', '.join(_METHODS)})"
            )
    return names


def _ids_arg(value):
    """Parse '1-5,9,12' into a sorted id list."""
    out = set()
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    return sorted(out)


def _ndofs(sol):
    heads = sol.cell_head if sol.cell_head is not None else sol.node_head
    n = sum(len(h) for h in heads)
    if sol.multipliers:
        n += sum(len(np.atleast_1d(v)) for v in sol.multipliers.values())
    return n


def _solution_cell_data(sol):
    if sol.cell_head is not None:
        return {"head": sol.cell_head}
    return {"head": nodal_p0_means(sol)}


def _family_case(family, parameter):
    if family == "angle":
        return bench.make_angle_case(parameter)
    if family == "sliding":
        return bench.make_sliding_case(parameter)
    if family == "shrinking":
        return bench.make_shrinking_case(parameter)
    raise ValueError(f"unknown family {family!r}")


def _family_params(family, ids=None):
    """(label, parameter) pairs for every configuration of a family."""
    if family == "angle":
        thetas = bench.angle_thetas()
        sel = ids or range(1, len(thetas) + 1)
        return [(f"angle-{k:02d}", float(thetas[k - 1])) for k in sel]
    pool = bench.SLIDING_IDS if family == "sliding" else bench.SHRINKING_IDS
    sel = ids or pool
    return [(f"{family}-{k:02d}", int(k)) for k in sel]


def _resolve_delta(args, net, default):
    """Mesh size from --delta or --delta-per-fracture; (delta, overrides)."""
    per = getattr(args, "delta_per_fracture", None)
    if per:
        return bench.cells_to_h(net, per)
    return (args.delta if args.delta is not None else default), None


def _run_case(net, method, delta, overrides, args, source=None):
    t0 = time.perf_counter()
    sol, nm = bench.run_method(
        net, method, delta, source=source, h_overrides=overrides,
        jitter=args.jitter, seed=args.seed, tol=args.tol,
    )
    return sol, nm, time.perf_counter() - t0


def _write_reports(rep, args):
    out = _out(args, "out")
    if out:
        rep.write(out)
    lines = _out(args, "lines")
    if lines:
        rep.write_lines(lines)
    timings = _out(args, "timings")
    if timings:
        rep.write_timings(timings)


# -- subcommands ---------------------------------------------------------


def _cmd_trace(args):
    net = load_network(args.network, require_dirichlet=False)
    rows = [
        (tr.id, tr.i, tr.j, tr.length,
         *(float(v) for v in tr.p0), *(float(v) for v in tr.p1))
        for tr in net.traces
    ]
    out = _out(args, "out")
    if out:
        with open(out, "w") as fh:
            fh.write("trace,fracture_i,fracture_j,length,"
                     "x0,y0,z0,x1,y1,z1\n")
            for r in rows:
                fh.write(",".join(
                    f"{v:.16e}" if isinstance(v, float) else str(v)
                    for v in r) + "\n")
    for r in rows:
        print(f"trace {r[0]}: fractures {r[1]}-{r[2]} length {r[3]:.6g}")
    print(f"{len(net.fractures)} fractures, {len(net.traces)} traces")
    return EXIT_OK


def _cmd_mesh(args):
    net = load_network(args.network, require_dirichlet=False)
    delta, overrides = _resolve_delta(args, net, args.delta)
    if delta is None:
        raise ParseError("mesh needs --delta or --delta-per-fracture")
    nm = triangulate_network(
        net, delta, args.conformity, h_overrides=overrides,
        jitter=args.jitter, seed=args.seed,
    )
    for fm in nm.fracture_meshes:
        print(f"fracture {fm.fracture.id}: {fm.ncells} cells, "
              f"{len(fm.points)} points")
    vtk = _out(args, "vtk")
    if vtk:
        export_vtk(nm, vtk)
        print(f"wrote {vtk}")
    return EXIT_OK


def _build_solve_network(args):
    """(case label, network, source, line, outflow portions, default delta)."""
    if args.network:
        net = load_network(args.network)
        portions = _ids_arg(args.outflow_portions) if args.outflow_portions \
            else None
        return "network", net, None, None, portions, None
    if args.case == "analytic":
        case = bench.make_analytic_case()
        return "analytic", case.network, case.source, None, None, 0.25
    if args.case == "angle":
        if args.theta is None:
            raise ParseError("angle case needs --theta")
        case = bench.make_angle_case(args.theta)
    else:
        if args.config_id is None:
            raise ParseError(f"{args.case} case needs --config-id")
        case = _family_case(args.case, args.config_id)
    label = f"{args.case}-{args.theta:.6f}" if args.case == "angle" \
        else f"{args.case}-{args.config_id:02d}"
    return (label, case.network, None, case.line,
            list(case.outflow_portions), case.delta)


def _cmd_solve(args):
    label, net, source, line, portions, default_delta = \
        _build_solve_network(args)
    delta, overrides = _resolve_delta(args, net, default_delta)
    if delta is None:
        raise ParseError("solve needs --delta or --delta-per-fracture")
    sol, nm, wall = _run_case(net, args.method, delta, overrides, args,
                              source=source)
    outflow = None
    if portions:
        flux = boundary_flux(sol, portions=set(portions))
        outflow = sum(flux.values())
    sample = None
    if line is not None:
        sample = sample_line(sol, line, args.samples)
    rep = BenchReport()
    rep.add_run(
        label, bench.METHOD_LABELS[args.method], delta,
        ncells=sum(fm.ncells for fm in nm.fracture_meshes),
        ndofs=_ndofs(sol),
        iterations=sol.info.iterations if sol.info else None,
        outflow=outflow, wall_time=wall, line_sample=sample,
    )
    _write_reports(rep, args)
    if outflow is not None:
        print(f"{label} {bench.METHOD_LABELS[args.method]} "
              f"delta={delta:g} outflow={outflow:.8e}")
    else:
        print(f"{label} {bench.METHOD_LABELS[args.method]} delta={delta:g} "
              f"ncells={sum(fm.ncells for fm in nm.fracture_meshes)}")
    vtk = _out(args, "vtk")
    if vtk:
        export_vtk(nm, vtk, cell_data=_solution_cell_data(sol))
    return EXIT_OK


def _cmd_convergence(args):
    case = bench.make_analytic_case()
    methods = args.methods or [args.method]
    deltas = [args.delta0 / 2 ** k for k in range(args.levels)]
    jobs = [(m, d) for m in methods for d in deltas]

    def run(job):
        m, d = job
        t0 = time.perf_counter()
        sol, nm = bench.run_method(
            case.network, m, d, source=case.source,
            jitter=args.jitter, seed=args.seed, tol=args.tol,
        )
        if sol.cell_head is not None:
            norms = error_norms(sol, case, target="cell-mean",
                                velocity_target="exact")
        else:
            norms = error_norms(sol, case)
        return sol, nm, norms, time.perf_counter() - t0

    results = _pmap(run, jobs)
    rep = BenchReport()
    for (m, d), (sol, nm, norms, wall) in zip(jobs, results):
        rep.add_run(
            "analytic", bench.METHOD_LABELS[m], d,
            ncells=sum(fm.ncells for fm in nm.fracture_meshes),
            ndofs=_ndofs(sol),
            iterations=sol.info.iterations if sol.info else None,
            norms=norms, wall_time=wall,
        )
    rep.fit_sweep_slopes()
    _write_reports(rep, args)
    for row in rep.rows:
        slope = row["slope_l2_head"]
        tail = f" slope={slope:.2f}" if slope is not None else ""
        print(f"{row['method']:12s} delta={row['delta']:.5f} "
              f"l2={row['l2_head']:.4e}{tail}")
    return EXIT_OK


def _cmd_sweep(args):
    params = _family_params(args.family, args.ids)
    emitted = []
    if args.emit_networks:
        for label, p in params:
            case = _family_case(args.family, p)
            path = _out_path_join(args.out_dir, f"{label}.json")
            dump_network(case.network, path)
            emitted.append((label, p, f"{label}.json"))
        manifest = _out_path_join(args.out_dir, f"{args.family}-manifest.csv")
        with open(manifest, "w") as fh:
            fh.write("id,parameter,file\n")
            for label, p, fname in emitted:
                pv = f"{p:.16e}" if isinstance(p, float) else str(p)
                fh.write(f"{label},{pv},{fname}\n")
        print(f"wrote {manifest}")

    jobs = [(label, p, m) for label, p in params for m in args.methods]

    def run(job):
        label, p, m = job
        case = _family_case(args.family, p)
        delta, overrides = _resolve_delta(args, case.network, case.delta)
        sol, nm, wall = _run_case(case.network, m, delta, overrides, args)
        flux = boundary_flux(sol, portions=set(case.outflow_portions))
        outflow = sum(flux.values())
        sample = sample_line(sol, case.line, args.samples) \
            if args.lines else None
        return delta, nm, sol, outflow, wall, sample

    results = _pmap(run, jobs)
    rep = BenchReport()
    for (label, p, m), (delta, nm, sol, outflow, wall, sample) in \
            zip(jobs, results):
        rep.add_run(
            label, bench.METHOD_LABELS[m], delta,
            ncells=sum(fm.ncells for fm in nm.fracture_meshes),
            ndofs=_ndofs(sol),
            iterations=sol.info.iterations if sol.info else None,
            outflow=outflow, wall_time=wall, line_sample=sample,
        )
    _write_reports(rep, args)
    print(f"{len(rep.rows)} runs over {len(params)} configurations")
    return EXIT_OK


def _cmd_upscale(args):
    if args.network:
        net = load_network(args.network, require_dirichlet=False)
    else:
        net = bench.make_upscale_network()
    delta, overrides = _resolve_delta(args, net, args.delta)
    if delta is None:
        raise ParseError("upscale needs --delta or --delta-per-fracture")
    if overrides is not None:
        delta = min(overrides.values())
    jobs = [(d, m) for d in args.directions for m in args.methods]

    def run(job):
        d, m = job
        t0 = time.perf_counter()
        value = bench.upscale(net, d, m, delta, jitter=args.jitter,
                              seed=args.seed, tol=args.tol)
        return value, time.perf_counter() - t0

    results = _pmap(run, jobs)
    rep = BenchReport()
    for (d, m), (value, wall) in zip(jobs, results):
        rep.add_run(f"upscale-{d}", bench.METHOD_LABELS[m], delta,
                    outflow=value, wall_time=wall)
        print(f"upscale {d} {bench.METHOD_LABELS[m]:12s} "
              f"outflow={value:.8e}")
    _write_reports(rep, args)
    return EXIT_OK


def _out_path_join(out_dir, name):
    return name if os.path.isabs(name) else os.path.join(out_dir, name)


# -- argument plumbing ---------------------------------------------------


def _add_common(p, mesh=True):
    p.add_argument("--out-dir", default=".",
                   help="directory for all relative output paths")
    p.add_argument("--config", help="JSON file preloading flag defaults")
    if mesh:
        p.add_argument("--delta", type=float, default=None,
                       help="target mesh size")
        p.add_argument("--delta-per-fracture", type=int, default=None,
                       help="target cell count per fracture (overrides "
                            "--delta)")
        p.add_argument("--jitter", type=float, default=0.0,
                       help="relative interior-vertex distortion amplitude")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for mesh distortion")
        p.add_argument("--tol", type=float, default=1e-10,
                       help="linear/optimization solver tolerance")


def _add_report(p):
    p.add_argument("--out", help="report CSV path")
    p.add_argument("--lines", help="line-sample CSV path")
    p.add_argument("--timings", help="wall-time CSV path")
    p.add_argument("--samples", type=int, default=200,
                   help="points per line sample")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dfnflow",
        description="Darcy flow on discrete fracture networks",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="compute and list fracture traces")
    p.add_argument("--network", required=True, help="network JSON file")
    p.add_argument("--out", help="trace table CSV path")
    _add_common(p, mesh=False)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("mesh", help="triangulate a network")
    p.add_argument("--network", required=True, help="network JSON file")
    p.add_argument("--conformity", default="matching",
                   choices=("matching", "conforming", "nonmatching"))
    p.add_argument("--vtk", help="mesh VTK output path")
    _add_common(p)
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("solve", help="mesh and solve one configuration")
    p.add_argument("--method", required=True, choices=_METHODS)
    p.add_argument("--case", choices=("analytic",) + _FAMILIES,
                   help="built-in case family")
    p.add_argument("--network", help="network JSON file (instead of --case)")
    p.add_argument("--theta", type=float, help="angle case parameter")
    p.add_argument("--config-id", type=int,
                   help="sliding/shrinking configuration id")
    p.add_argument("--outflow-portions",
                   help="portion ids summed into the outflow column "
                        "(network runs)")
    p.add_argument("--vtk", help="solution VTK output path")
    _add_common(p)
    _add_report(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("convergence",
                       help="manufactured-solution refinement sweep")
    p.add_argument("--method", choices=_METHODS, default="mvem0")
    p.add_argument("--methods", type=_methods_arg, default=None,
                   help="comma list or 'all' (overrides --method)")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--delta0", type=float, default=0.25,
                   help="coarsest mesh size")
    _add_common(p)
    _add_report(p)
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("sweep", help="run a benchmark case family")
    p.add_argument("--family", required=True, choices=_FAMILIES)
    p.add_argument("--methods", type=_methods_arg, default="all")
    p.add_argument("--ids", type=_ids_arg, default=None,
                   help="configuration subset, e.g. '1-5,9'")
    p.add_argument("--emit-networks", action="store_true",
                   help="write per-configuration network JSON + manifest")
    _add_common(p)
    _add_report(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("upscale", help="directional upscaled outflow")
    p.add_argument("--network", help="network JSON file (default: bundled "
                                     "5-fracture synthetic network)")
    p.add_argument("--methods", type=_methods_arg, default="all")
    p.add_argument("--directions", default="x,y,z",
                   type=lambda s: [d.strip() for d in s.split(",") if
                                   d.strip()])
    _add_common(p)
    _add_report(p)
    p.set_defaults(func=_cmd_upscale)

    return ap


def _apply_config(ap, argv):
    """Two-pass parse: JSON config fills defaults, flags override."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    args = ap.parse_args(argv)
    if known.config:
        with open(known.config) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{known.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ParseError(f"{known.config}: config must be a JSON object")
        # replay: config values become defaults, explicit flags override
        defaults = {k.replace("-", "_"): v for k, v in cfg.items()}
        for action in _subparser_for(ap, args.command)._actions:
            if action.dest in defaults:
                if isinstance(action.type, type(_methods_arg)) and \
                        isinstance(defaults[action.dest], str):
                    defaults[action.dest] = action.type(defaults[action.dest])
        _subparser_for(ap, args.command).set_defaults(**defaults)
        args = ap.parse_args(argv)
    return args


def _subparser_for(ap, command):
    for action in ap._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise RuntimeError("no subparsers registered")


def main(argv=None):
    ap = build_parser()
    try:
        args = _apply_config(ap, sys.argv[1:] if argv is None else argv)
        if getattr(args, "methods", None) is not None and \
                isinstance(args.methods, str):
            args.methods = _methods_arg(args.methods)
        return args.func(args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except _GEOMETRY_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except DfnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
