"""Benchmark problem generators and the method/mesh driver.

Four families of networks exercise the solvers:

* an analytic three-fracture Poisson problem with a closed-form head,
  used for convergence studies;
* a three-fracture configuration whose two traces meet at a vanishing
  angle (20 angles between pi/2 and pi/565);
* a sliding three-fracture chain whose connecting trace shrinks from
  0.6 to 0.01 over 21 configurations;
* a ten-fracture network whose middle fracture shrinks from length 2 to
  0.26 over 44 configurations, detaching from cross fractures one by
  one while a bypass keeps the network connected.

``upscale`` drives the unit-head-drop workflow on any boxed network.
All generators are deterministic: the same parameters produce the same
network, byte for byte, when serialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatch, NoBoundaryContact
from .geometry import BoundaryPortion, Fracture, FractureNetwork
from .meshing import agglomerate, triangulate_network

__all__ = [
    "AnalyticCase",
    "CaseFamily",
    "ANGLE_COUNT",
    "SLIDING_IDS",
    "SHRINKING_IDS",
    "METHOD_CONFORMITY",
    "METHOD_LABELS",
    "angle_thetas",
    "make_analytic_case",
    "make_angle_case",
    "make_sliding_case",
    "make_shrinking_case",
    "make_upscale_network",
    "connectivity_graph",
    "shrinking_detachments",
    "cells_to_h",
    "mesh_for_method",
    "solve_on_mesh",
    "run_method",
    "upscale",
]

ANGLE_COUNT = 20
SLIDING_IDS = range(1, 22)
SHRINKING_IDS = range(1, 45)

# mesh class each method needs; the coarse variant starts from the same
# matching triangulation and glues cells afterwards
METHOD_CONFORMITY = {
    "tpfa": "matching",
    "mpfa": "matching",
    "fem": "matching",
    "fem-mortar": "conforming",
    "mvem0": "matching",
    "mvem0-coarse": "matching",
    "opt-fem": "nonmatching",
}

METHOD_LABELS = {
    "tpfa": "TPFA",
    "mpfa": "MPFA",
    "fem": "FEM",
    "fem-mortar": "FEM-MORTAR",
    "mvem0": "MVEM-CONF",
    "mvem0-coarse": "MVEM-COARSE",
    "opt-fem": "OPT-FEM",
}

COARSEN_FACTOR = 0.6     # glue cells below this fraction of the mean area


# -- analytic convergence case ------------------------------------------
#
# Three axis-aligned fractures:
#   fracture 1: plane z = 0, (x, y) in (-1, 1)^2
#   fracture 2: plane y = 0, x in (-1, 0), z in (-1, 1)
#   fracture 3: plane x = 0, (y, z) in (-1, 1)^2
# The head is continuous across all three traces and its conormal jumps
# balance: the arctan2 branch cut of h1 along {y = 0, x < 0} cancels
# against the |z| kink of h2, the other two traces carry no jump.  The
# extents are validated at build time by a finite-difference flux probe
# on every trace.


def _analytic_head(fid, pts):
    p = np.atleast_2d(np.asarray(pts, float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if fid == 1:
        t = np.arctan2(y, x)
        return 0.1 * (-x - 0.5) * (8.0 * x * y * (x * x + y * y) * t + x ** 3)
    if fid == 2:
        return (0.1 - 0.8 * math.pi * np.abs(z)) * (-x - 0.5) * x ** 3
    return (y ** 3 - y) * (z * z - z)


def _analytic_grad(fid, pts):
    """In-plane gradient of the exact head, as global 3D vectors."""
    p = np.atleast_2d(np.asarray(pts, float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    g = np.zeros_like(p)
    if fid == 1:
        t = np.arctan2(y, x)
        r2 = x * x + y * y
        g[:, 0] = (-x ** 3 / 10.0 - 0.8 * x * y * t * r2
                   - (2.0 * x + 1.0) / 20.0
                   * (16.0 * x * x * y * t + 3.0 * x * x
                      - 8.0 * x * y * y + 8.0 * y * r2 * t))
        g[:, 1] = -0.4 * x * (2.0 * x + 1.0) * (x * y + 2.0 * y * y * t + r2 * t)
    elif fid == 2:
        g[:, 0] = -(4.0 * x ** 3 + 1.5 * x * x) * (0.1 - 0.8 * math.pi * np.abs(z))
        g[:, 2] = 0.4 * math.pi * x ** 3 * (2.0 * x + 1.0) * np.sign(z)
    else:
        g[:, 1] = (3.0 * y * y - 1.0) * (z * z - z)
        g[:, 2] = (y ** 3 - y) * (2.0 * z - 1.0)
    return g


def _analytic_source(fid, pts):
    """Forcing q = -laplacian(h), derived symbolically and frozen."""
    p = np.atleast_2d(np.asarray(pts, float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if fid == 1:
        t = np.arctan2(y, x)
        return (1.6 * x ** 3 + 2.0 * x * x - 3.2 * x * y * y + 0.3 * x
                - 0.8 * y * y + 1.6 * t * y * (9.0 * x * x + 3.0 * x + y * y))
    if fid == 2:
        return (12.0 * x * x + 3.0 * x) * (0.1 - 0.8 * math.pi * np.abs(z))
    return -2.0 * y ** 3 - 6.0 * y * z * z + 6.0 * y * z + 2.0 * y


@dataclass(frozen=True)
class AnalyticCase:
    """Poisson problem on three crossing fractures with a known head."""

    network: FractureNetwork

    @staticmethod
    def head(fid, pts):
        return _analytic_head(fid, pts)

    @staticmethod
    def grad(fid, pts):
        return _analytic_grad(fid, pts)

    @staticmethod
    def source(fid, pts):
        return _analytic_source(fid, pts)


def _dirichlet_from(fid):
    # bind fid now, not at call time
    return lambda q: float(_analytic_head(fid, q)[0])


def _check_trace_compatibility(net, head, grad, nsamples=33):
    """Head continuity and conormal flux balance along every trace.

    Probes sit 1e-9 of the parent diameter off the trace on each side
    that exists; the closed-form gradients make the one-sided limits
    exact, so the residual measures the geometry, not the step.
    """
    for tr in net.traces:
        ts = np.linspace(0.04, 0.96, nsamples)
        pts3 = tr.p0 + ts[:, None] * (tr.p1 - tr.p0)
        hi = head(tr.i, pts3)
        hj = head(tr.j, pts3)
        if np.max(np.abs(hi - hj)) > 1e-12:
            raise GeometryMismatch(
                f"exact head jumps by {np.max(np.abs(hi - hj)):.3e} "
                f"across trace {tr.id}"
            )
        resid = np.zeros(nsamples)
        for fid in (tr.i, tr.j):
            frac = net.fracture(fid)
            q2 = tr.endpoints_local(frac)
            d2 = q2[1] - q2[0]
            d2 /= np.linalg.norm(d2)
            m2 = np.array([-d2[1], d2[0]])
            m3 = m2[0] * frac.t1 + m2[1] * frac.t2
            eps = 1e-9 * frac.diameter
            base2 = q2[0] + ts[:, None] * (q2[1] - q2[0])
            for sgn in (1.0, -1.0):
                probe2 = base2 + sgn * eps * m2
                if not np.all(frac.contains2(probe2, net.tol_geom)):
                    continue  # trace runs along this fracture's boundary
                g = grad(fid, frac.to_global(probe2))
                resid += sgn * (g @ m3)
        if np.max(np.abs(resid)) > 1e-8:
            raise GeometryMismatch(
                f"conormal fluxes do not balance on trace {tr.id}: "
                f"residual {np.max(np.abs(resid)):.3e}"
            )


def make_analytic_case():
    """Build the convergence test network with exact Dirichlet data.

    Boundary values are callables evaluating the exact head, so this
    case cannot be serialized to network JSON; it is built in memory.
    """
    fractures = [
        Fracture(1, [(-1, -1, 0), (1, -1, 0), (1, 1, 0), (-1, 1, 0)]),
        Fracture(2, [(-1, 0, -1), (0, 0, -1), (0, 0, 1), (-1, 0, 1)]),
        Fracture(3, [(0, -1, -1), (0, 1, -1), (0, 1, 1), (0, -1, 1)]),
    ]
    boundary = [
        BoundaryPortion(f.id, e, "dirichlet", _dirichlet_from(f.id))
        for f in fractures for e in range(4)
        # fracture 2 ends on the trace shared with fracture 3; that edge
        # is a coupling interface, not an outer boundary
        if (f.id, e) != (2, 1)
    ]
    net = FractureNetwork(fractures, boundary=boundary)
    _check_trace_compatibility(net, _analytic_head, _analytic_grad)
    return AnalyticCase(net)


# -- geometry sweep families --------------------------------------------


@dataclass(frozen=True)
class CaseFamily:
    """One configuration of a parameterized benchmark family."""

    family: str
    parameter: float
    network: FractureNetwork
    line: tuple            # (fracture id, 3D start, 3D end) of the report line
    outflow_portions: tuple  # indices into network.boundary summed as outflow
    delta: float = 0.0       # suggested mesh size, 0 means caller decides


def angle_thetas(count=ANGLE_COUNT):
    """The swept trace angles, equally spaced from pi/2 down to pi/565."""
    return np.linspace(math.pi / 2.0, math.pi / 565.0, count)


def make_angle_case(theta, delta=0.1):
    """Two traces meeting at angle ``theta`` on a unit-square fracture.

    Frozen geometry: the host fracture is the unit square in z = 0 with
    inflow head 1 on its x = 0 edge.  A fixed fracture in the plane
    x = 0.5 traces the segment {x = 0.5, y in (0.05, 0.95), z = 0}; a
    second fracture rotates about P = (0.5, 0.5, 0) with horizontal
    trace direction (sin theta, cos theta, 0) and half-length 0.45.
    Both carry outflow head 0 on their top (z = 1) edges; everything
    else is no-flow and there is no forcing.
    """
    if not 0.0 < theta <= math.pi / 2.0 + 1e-12:
        raise ValueError(f"theta must lie in (0, pi/2], got {theta}")
    host = Fracture(1, [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
    fixed = Fracture(2, [(0.5, 0.05, -0.5), (0.5, 0.95, -0.5),
                         (0.5, 0.95, 1.0), (0.5, 0.05, 1.0)])
    d = np.array([math.sin(theta), math.cos(theta), 0.0])
    p = np.array([0.5, 0.5, 0.0])
    a, b = p - 0.45 * d, p + 0.45 * d
    lift = np.array([0.0, 0.0, 1.0])
    rot = Fracture(3, [a - 0.5 * lift, b - 0.5 * lift, b + lift, a + lift])
    boundary = [
        BoundaryPortion(1, 3, "dirichlet", 1.0),
        BoundaryPortion(2, 2, "dirichlet", 0.0),
        BoundaryPortion(3, 2, "dirichlet", 0.0),
    ]
    net = FractureNetwork([host, fixed, rot], boundary=boundary)
    return CaseFamily(
        family="angle",
        parameter=float(theta),
        network=net,
        line=(1, np.array([0.35, 0.0, 0.0]), np.array([0.35, 1.0, 0.0])),
        outflow_portions=(1, 2),
        delta=float(delta),
    )


def make_sliding_case(cid, delta=0.05):
    """Three-fracture chain whose left trace shrinks as the chain slides.

    Frozen geometry: the fixed fracture is the unit square in y = 0.5
    (x, z in (0, 1)) with inflow head 1 on its bottom edge.  A
    horizontal fracture in z = 0.5 spans (x, y) in (s, s+1) x (0, 1)
    and a vertical outflow fracture sits in x = s + 0.9 with head 0 on
    its bottom edge; both translate with s = 0.4 + 0.59 (id - 1) / 20,
    so the left trace length runs 0.6 down to 0.01 linearly in id.
    """
    if cid not in SLIDING_IDS:
        raise ValueError(f"sliding configuration id must be 1..21, got {cid}")
    s = 0.4 + 0.59 * (cid - 1) / 20.0
    fixed = Fracture(1, [(0, 0.5, 0), (1, 0.5, 0), (1, 0.5, 1), (0, 0.5, 1)])
    slider = Fracture(2, [(s, 0, 0.5), (s + 1, 0, 0.5),
                          (s + 1, 1, 0.5), (s, 1, 0.5)])
    sink = Fracture(3, [(s + 0.9, 0, 0), (s + 0.9, 1, 0),
                        (s + 0.9, 1, 1), (s + 0.9, 0, 1)])
    boundary = [
        BoundaryPortion(1, 0, "dirichlet", 1.0),
        BoundaryPortion(3, 0, "dirichlet", 0.0),
    ]
    net = FractureNetwork([fixed, slider, sink], boundary=boundary)
    return CaseFamily(
        family="sliding",
        parameter=float(cid),
        network=net,
        line=(1, np.array([0.5, 0.5, 0.0]), np.array([0.5, 0.5, 1.0])),
        outflow_portions=(1,),
        delta=float(delta),
    )


# cross fractures the shrinking middle fracture can detach from; the
# innermost (|x| = 0.1) keeps it connected through configuration 44
SHRINK_STATIONS = (-0.95, -0.65, -0.35, 0.1, 0.5, 0.8)


def _shrink_length(cid):
    return 2.0 - (2.0 - 0.26) * (cid - 1) / 43.0


def make_shrinking_case(cid, delta=0.08):
    """Ten-fracture network whose middle fracture shrinks away.

    Frozen geometry: two vertical rails in x = -1.5 (inflow head 1,
    bottom edge) and x = +1.5 (outflow head 0, bottom edge) span
    y in (0, 2), z in (0, 1).  A bypass fracture in z = 0.75 connects
    the rails, six cross fractures hang off the bypass at the x
    stations above, and the shrinking fracture in z = 0.5 spans
    x in (-L/2, L/2), y in (0.5, 1.5) with L = 2 - 1.74 (id - 1) / 43
    (2 at id 1, 0.26 at id 44).  Each time L/2 passes a station the
    network loses one connection and the outflow jumps.
    """
    if cid not in SHRINKING_IDS:
        raise ValueError(f"shrinking configuration id must be 1..44, got {cid}")
    half = 0.5 * _shrink_length(cid)
    fractures = [
        Fracture(1, [(-1.5, 0, 0), (-1.5, 2, 0), (-1.5, 2, 1), (-1.5, 0, 1)]),
        Fracture(2, [(1.5, 0, 0), (1.5, 2, 0), (1.5, 2, 1), (1.5, 0, 1)]),
        Fracture(3, [(-1.6, 0.25, 0.75), (1.6, 0.25, 0.75),
                     (1.6, 1.75, 0.75), (-1.6, 1.75, 0.75)]),
    ]
    for k, xk in enumerate(SHRINK_STATIONS):
        fractures.append(
            Fracture(4 + k, [(xk, 0.25, 0.25), (xk, 1.75, 0.25),
                             (xk, 1.75, 0.95), (xk, 0.25, 0.95)])
        )
    fractures.append(
        Fracture(10, [(-half, 0.5, 0.5), (half, 0.5, 0.5),
                      (half, 1.5, 0.5), (-half, 1.5, 0.5)])
    )
    boundary = [
        BoundaryPortion(1, 0, "dirichlet", 1.0),
        BoundaryPortion(2, 0, "dirichlet", 0.0),
    ]
    net = FractureNetwork(fractures, boundary=boundary)
    return CaseFamily(
        family="shrinking",
        parameter=float(cid),
        network=net,
        line=(2, np.array([1.5, 0.0, 0.5]), np.array([1.5, 2.0, 0.5])),
        outflow_portions=(1,),
        delta=float(delta),
    )


def connectivity_graph(net):
    """Fracture adjacency induced by the traces, as a frozenset of pairs."""
    return frozenset((min(t.i, t.j), max(t.i, t.j)) for t in net.traces)


def shrinking_detachments():
    """Configuration ids at which the shrinking fracture loses a trace."""
    out = []
    for xk in SHRINK_STATIONS:
        for cid in SHRINKING_IDS:
            if 0.5 * _shrink_length(cid) < abs(xk):
                out.append(cid)
                break
    return tuple(sorted(set(out)))


# -- upscaling workflow -------------------------------------------------


def make_upscale_network():
    """Bundled five-fracture network crossing a unit cube.

    Three full diagonal planes (z = 0.5, x = 0.5, y = 0.5) plus two
    partial fractures (y = 0.25 reaching the x = 0 face, z = 0.8
    reaching the x = 1 face); eight traces, every cube face touched.
    """
    fractures = [
        Fracture(1, [(0, 0, 0.5), (1, 0, 0.5), (1, 1, 0.5), (0, 1, 0.5)]),
        Fracture(2, [(0.5, 0, 0), (0.5, 1, 0), (0.5, 1, 1), (0.5, 0, 1)]),
        Fracture(3, [(0, 0.5, 0), (1, 0.5, 0), (1, 0.5, 1), (0, 0.5, 1)]),
        Fracture(4, [(0, 0.25, 0), (0.6, 0.25, 0), (0.6, 0.25, 1), (0, 0.25, 1)]),
        Fracture(5, [(0.3, 0.2, 0.8), (1, 0.2, 0.8), (1, 0.9, 0.8), (0.3, 0.9, 0.8)]),
    ]
    return FractureNetwork(fractures, require_dirichlet=False)


def upscale(network, direction, method, delta, jitter=0.0, seed=0, tol=1e-10):
    """Outflow under a unit head drop along one coordinate direction.

    Fracture edges on the two bounding-box faces orthogonal to
    ``direction`` receive head 1 (lower face) and 0 (upper face); all
    other boundaries are no-flow.  Returns the total Darcy flux leaving
    through the downstream face.
    """
    axes = {"x": 0, "y": 1, "z": 2}
    if direction not in axes:
        raise ValueError(f"direction must be one of x, y, z, got {direction!r}")
    ax = axes[direction]
    allv = np.vstack([f.vertices for f in network.fractures])
    lo, hi = allv[:, ax].min(), allv[:, ax].max()
    scale = float(np.max(allv.max(axis=0) - allv.min(axis=0)))
    tol_face = max(network.tol_geom, 1e-9 * scale)

    boundary = []
    found = {lo: False, hi: False}
    for f in network.fractures:
        for e in range(f.nverts):
            v0 = f.vertices[e]
            v1 = f.vertices[(e + 1) % f.nverts]
            for face, value in ((lo, 1.0), (hi, 0.0)):
                if (abs(v0[ax] - face) <= tol_face
                        and abs(v1[ax] - face) <= tol_face):
                    boundary.append(BoundaryPortion(f.id, e, "dirichlet", value))
                    found[face] = True
    if not (found[lo] and found[hi]):
        missing = f"{direction} = {lo if not found[lo] else hi}"
        raise NoBoundaryContact(
            f"no fracture edge lies on the driving face {missing}"
        )
    driven = FractureNetwork(list(network.fractures), boundary=boundary)
    sink_portions = [k for k, p in enumerate(driven.boundary)
                     if p.kind == "dirichlet" and p.value == 0.0]
    sol, _ = run_method(driven, method, delta, jitter=jitter, seed=seed, tol=tol)
    from .post import boundary_flux

    flux = boundary_flux(sol)
    return float(sum(flux[k] for k in sink_portions))


# -- method driver ------------------------------------------------------


def cells_to_h(net, cells_per_fracture):
    """Per-fracture target edge lengths hitting a cell-count budget.

    Quasi-uniform triangles of size h tile a fracture of area A with
    about 2 A / h^2 cells.
    """
    overrides = {
        f.id: math.sqrt(2.0 * f.area / cells_per_fracture)
        for f in net.fractures
    }
    target = min(overrides.values())
    return target, overrides


def mesh_for_method(net, method, delta, h_overrides=None, jitter=0.0, seed=0):
    """Mesh ``net`` in the conformity class ``method`` requires."""
    if method not in METHOD_CONFORMITY:
        raise ValueError(f"unknown method {method!r}")
    nm = triangulate_network(
        net, delta, METHOD_CONFORMITY[method],
        h_overrides=h_overrides, jitter=jitter, seed=seed,
    )
    if method == "mvem0-coarse":
        mean_area = float(np.mean(np.concatenate(
            [fm.cell_area for fm in nm.fracture_meshes]
        )))
        nm = agglomerate(nm, COARSEN_FACTOR * mean_area)
    return nm


def solve_on_mesh(nm, method, source=None, tol=1e-10):
    from .fem import solve_fem, solve_fem_mortar
    from .fv import solve_mpfa, solve_tpfa
    from .mvem import solve_mvem0
    from .optfem import solve_optfem

    if method == "tpfa":
        return solve_tpfa(nm, source=source, tol=tol)
    if method == "mpfa":
        return solve_mpfa(nm, source=source, tol=tol)
    if method == "fem":
        return solve_fem(nm, source=source, tol=tol)
    if method == "fem-mortar":
        return solve_fem_mortar(nm, source=source, tol=tol)
    if method in ("mvem0", "mvem0-coarse"):
        return solve_mvem0(nm, source=source, tol=tol)
    if method == "opt-fem":
        return solve_optfem(nm, source=source)
    raise ValueError(f"unknown method {method!r}")


def run_method(net, method, delta, source=None, h_overrides=None,
               jitter=0.0, seed=0, tol=1e-10):
    """Mesh and solve; returns (solution, mesh)."""
    nm = mesh_for_method(net, method, delta, h_overrides=h_overrides,
                         jitter=jitter, seed=seed)
    return solve_on_mesh(nm, method, source=source, tol=tol), nm
