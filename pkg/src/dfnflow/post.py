"""Error norms, line sampling, slope fitting, outflow, and reports.

Norms integrate with a degree-4 quadrature per cell; on non-matching
meshes, cells crossed by a trace are split along it first because the
exact solutions are only piecewise smooth.  Reports serialize to CSV
with a versioned header and fixed float formatting, so identical runs
produce identical bytes (wall times go to a separate timings file).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveError, OffFracture
from .fem import fem_boundary_flux
from .meshing.core import EDGE_BOUNDARY
from .quadrature import polygon_rule

__all__ = [
    "ErrorNorms",
    "error_norms",
    "sample_line",
    "fit_slope",
    "boundary_flux",
    "BenchReport",
]

REPORT_SCHEMA = "dfnflow report v1"


@dataclass(frozen=True)
class ErrorNorms:
    l2_head: float
    h1_head: float | None = None
    l2_velocity: float | None = None


def _shoelace(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _clip_half(poly, a, n):
    """Part of a convex polygon with (p - a) . n >= 0."""
    d = (poly - a) @ n
    out = []
    m = len(poly)
    for k in range(m):
        j = (k + 1) % m
        if d[k] >= 0.0:
            out.append(poly[k])
        if (d[k] > 0.0) > (d[j] > 0.0) and d[k] != d[j]:
            t = d[k] / (d[k] - d[j])
            out.append(poly[k] + t * (poly[j] - poly[k]))
    return np.array(out) if len(out) >= 3 else None


def _cell_pieces(fm, cuts):
    """Cell polygons, split along every crossing trace line.

    ``cuts`` is a list of (origin, direction, length) in frame
    coordinates.  Pieces smaller than a relative area floor are
    dropped; their contribution to an integral is below rounding.
    """
    pieces = []
    for c in range(fm.ncells):
        poly = fm.points[fm.cells[c]]
        parts = [poly]
        for a, d, L in cuts:
            n = np.array([-d[1], d[0]])
            nxt = []
            for p in parts:
                t = (p - a) @ d
                # ignore lines that pass beyond the trace segment
                if t.max() < -1e-12 or t.min() > L + 1e-12:
                    nxt.append(p)
                    continue
                s = (p - a) @ n
                if s.max() <= 1e-12 or s.min() >= -1e-12:
                    nxt.append(p)
                    continue
                area = _shoelace(p)
                for half in (_clip_half(p, a, n), _clip_half(p, a, -n)):
                    if half is None:
                        continue
                    if _shoelace(half) > 1e-12 * area:
                        nxt.append(half)
            parts = nxt
        pieces.append(parts)
    return pieces


def _fracture_cuts(nm, fid):
    if nm.conformity != "nonmatching":
        return []
    net = nm.network
    frac = net.fracture(fid)
    cuts = []
    for tr in net.traces_of(fid):
        q = tr.endpoints_local(frac)
        d = q[1] - q[0]
        L = float(np.linalg.norm(d))
        cuts.append((q[0], d / L, L))
    return cuts


def _cell_means(fm, pieces, fid, func):
    """Cellwise means of a global-coordinate scalar or vector field."""
    first = None
    out = None
    for c, parts in enumerate(pieces):
        acc = None
        area = 0.0
        for poly in parts:
            pts, w = polygon_rule(poly)
            v = func(fid, fm.fracture.to_global(pts))
            contrib = w @ v
            acc = contrib if acc is None else acc + contrib
            area += w.sum()
        if first is None:
            first = acc
            out = np.zeros((len(pieces),) + np.shape(acc))
        out[c] = acc / area
    return out


def error_norms(solution, exact, target="exact", velocity_target="exact"):
    """L2 head error, plus H1 head and L2 velocity errors if available.

    ``exact`` provides ``head(fid, pts3)`` and, when gradient-based
    norms are wanted, ``grad(fid, pts3)`` returning global in-plane
    gradients.  For cell-centered methods ``target="cell-mean"``
    compares against the cellwise mean of the exact head (the natural
    interpolant of a zeroth-order method); same for
    ``velocity_target``.
    """
    nm = solution.mesh
    has_grad = hasattr(exact, "grad")
    p1 = solution.kind == "P1"
    l2 = 0.0
    h1 = 0.0 if (p1 and has_grad) else None
    l2u = 0.0 if (solution.cell_velocity is not None and has_grad) else None
    for fm in nm.fracture_meshes:
        frac = fm.fracture
        fid = frac.id
        pieces = _cell_pieces(fm, _fracture_cuts(nm, fid))
        hmean = None
        if not p1 and target == "cell-mean":
            hmean = _cell_means(fm, pieces, fid, exact.head)
        umean = None
        if l2u is not None and velocity_target == "cell-mean":
            def _vel(fid_, pts3):
                g = exact.grad(fid_, pts3)
                g2 = np.column_stack([g @ frac.t1, g @ frac.t2])
                return -(g2 @ frac.permeability.T)
            umean = _cell_means(fm, pieces, fid, _vel)
        K = frac.permeability
        for c, parts in enumerate(pieces):
            for poly in parts:
                pts, w = polygon_rule(poly)
                pts3 = frac.to_global(pts)
                he = exact.head(fid, pts3)
                if hmean is not None:
                    he = np.full_like(he, hmean[c])
                hh = solution.head_in_cell(fid, c, pts)
                l2 += w @ (he - hh) ** 2
                if h1 is None and l2u is None:
                    continue
                g = exact.grad(fid, pts3)
                g2 = np.column_stack([g @ frac.t1, g @ frac.t2])
                if h1 is not None:
                    gh = solution.grad_in_cell(fid, c)
                    h1 += w @ ((g2 - gh) ** 2).sum(axis=1)
                if l2u is not None:
                    ue = -(g2 @ K.T)
                    if umean is not None:
                        ue = np.broadcast_to(umean[c], ue.shape)
                    uh = solution.cell_velocity[fid - 1][c]
                    l2u += w @ ((ue - uh) ** 2).sum(axis=1)
    return ErrorNorms(
        l2_head=float(np.sqrt(l2)),
        h1_head=None if h1 is None else float(np.sqrt(h1)),
        l2_velocity=None if l2u is None else float(np.sqrt(l2u)),
    )


def sample_line(solution, line, n_samples=200):
    """Head along a segment, evaluated as the method represents it.

    ``line`` is (fracture id, start, end) with 3D endpoints on the
    fracture.  Returns (arc length, head) arrays at ``n_samples``
    midpoints.  Piecewise-constant methods produce their natural stair
    shape.
    """
    fid, a3, b3 = line
    nm = solution.mesh
    fm = nm.mesh_of(fid)
    frac = fm.fracture
    tol = max(nm.network.tol_geom, 1e-12 * frac.diameter)
    try:
        a2 = frac.to_local(np.asarray(a3, float), tol)
        b2 = frac.to_local(np.asarray(b3, float), tol)
    except Exception as exc:
        raise OffFracture(f"line endpoints leave fracture {fid}: {exc}") from exc
    if not (frac.contains2(a2, tol) and frac.contains2(b2, tol)):
        raise OffFracture(f"line endpoints leave fracture {fid}")
    t = (np.arange(n_samples) + 0.5) / n_samples
    pts = a2 + t[:, None] * (b2 - a2)
    s = t * float(np.linalg.norm(b2 - a2))
    vals = np.full(n_samples, np.nan)
    todo = np.ones(n_samples, dtype=bool)
    for c in range(fm.ncells):
        if not todo.any():
            break
        poly = fm.points[fm.cells[c]]
        sel = np.flatnonzero(todo)
        inside = np.ones(len(sel), dtype=bool)
        m = len(poly)
        for k in range(m):
            e = poly[(k + 1) % m] - poly[k]
            nrm = np.array([-e[1], e[0]]) / np.linalg.norm(e)
            inside &= (pts[sel] - poly[k]) @ nrm >= -tol
        hit = sel[inside]
        if len(hit):
            vals[hit] = solution.head_in_cell(fid, c, pts[hit])
            todo[hit] = False
    if todo.any():
        raise OffFracture(
            f"{int(todo.sum())} sample points fall outside the mesh of "
            f"fracture {fid}"
        )
    return s, vals


def fit_slope(errors, mesh_sizes):
    """Least-squares slope of log(error) against log(size)."""
    e = np.asarray(errors, float)
    d = np.asarray(mesh_sizes, float)
    if len(e) < 3 or len(e) != len(d):
        raise ValueError("need at least 3 matching (size, error) pairs")
    if np.any(e <= 0.0) or np.any(d <= 0.0):
        raise NonPositiveError("errors and mesh sizes must be positive")
    return float(np.polyfit(np.log(d), np.log(e), 1)[0])


def boundary_flux(solution, portions=None):
    """Outward Darcy flux per boundary portion (positive leaves).

    Nodal methods read their assembled residual; edge-flux methods sum
    signed edge fluxes over each portion's edges.
    """
    if solution.node_head is not None:
        return fem_boundary_flux(solution, portions)
    out = {}
    for fm, flux in zip(solution.mesh.fracture_meshes, solution.edge_flux):
        for e in np.flatnonzero(fm.edge_kind == EDGE_BOUNDARY):
            p = int(fm.edge_ref[e])
            if portions is not None and p not in portions:
                continue
            out[p] = out.get(p, 0.0) + float(flux[e, 0])
    return out


class BenchReport:
    """Accumulates run rows and writes deterministic CSV artifacts."""

    COLUMNS = (
        "run_id", "case", "method", "delta", "ncells", "ndofs",
        "iterations", "l2_head", "h1_head", "l2_velocity", "outflow",
        "slope_l2_head", "slope_h1_head", "slope_l2_velocity",
        "slope_l2_head_vs_n", "slope_h1_head_vs_n", "slope_l2_velocity_vs_n",
    )

    def __init__(self):
        self.rows = []
        self.lines = []     # (run_id, case, method, arc, head) samples
        self.timings = []   # (run_id, wall_time)

    def add_run(self, case, method, delta, ncells=None, ndofs=None,
                iterations=None, norms=None, outflow=None,
                wall_time=None, line_sample=None):
        rid = len(self.rows) + 1
        row = {
            "run_id": rid, "case": case, "method": method, "delta": delta,
            "ncells": ncells, "ndofs": ndofs, "iterations": iterations,
            "l2_head": None, "h1_head": None, "l2_velocity": None,
            "outflow": outflow, "slope_l2_head": None,
            "slope_h1_head": None, "slope_l2_velocity": None,
            "slope_l2_head_vs_n": None, "slope_h1_head_vs_n": None,
            "slope_l2_velocity_vs_n": None,
        }
        if norms is not None:
            row["l2_head"] = norms.l2_head
            row["h1_head"] = norms.h1_head
            row["l2_velocity"] = norms.l2_velocity
        self.rows.append(row)
        if wall_time is not None:
            self.timings.append((rid, wall_time))
        if line_sample is not None:
            arc, head = line_sample
            for a, h in zip(arc, head):
                self.lines.append((rid, case, method, a, h))
        return rid

    def fit_sweep_slopes(self):
        """Fit log-log slopes per (case, method) group with >= 3 runs.

        Each slope is stored against mesh size (positive for a
        converging method) and against element count (-slope / 2 in
        2D) on every row of the group.
        """
        groups = {}
        for row in self.rows:
            groups.setdefault((row["case"], row["method"]), []).append(row)
        for rows in groups.values():
            if len(rows) < 3:
                continue
            deltas = [r["delta"] for r in rows]
            for key in ("l2_head", "h1_head", "l2_velocity"):
                vals = [r[key] for r in rows]
                if any(v is None or v <= 0.0 for v in vals):
                    continue
                slope = fit_slope(vals, deltas)
                for r in rows:
                    r["slope_" + key] = slope
                    r["slope_" + key + "_vs_n"] = -slope / 2.0

    @staticmethod
    def _fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return f"{v:.16e}"
        return str(v)

    def write(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# {REPORT_SCHEMA}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows:
                w.writerow([self._fmt(row[c]) for c in self.COLUMNS])

    def write_lines(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# {REPORT_SCHEMA}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("run_id", "case", "method", "arclength", "head"))
            for rid, case, method, a, h in self.lines:
                w.writerow((rid, case, method, self._fmt(float(a)),
                            self._fmt(float(h))))

    def write_timings(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# {REPORT_SCHEMA}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("run_id", "wall_time"))
            for rid, t in self.timings:
                w.writerow((rid, self._fmt(float(t))))
