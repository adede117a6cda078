"""Planar fracture networks: polygons, frames, traces, boundary data.

Every containment or overlap decision goes through two tolerances derived
from the bounding-box diameter ``d`` of the network: ``tol_geom = 1e-9 * d``
for point distances and ``tol_len = 1e-8 * d`` for segment lengths.  Nothing
in this module mutates its inputs; fractures and traces are frozen after
construction so they can be shared freely between meshes and solvers.
"""

from __future__ import annotations

import json
import numbers
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (
    DegenerateFracture,
    GeometryMismatch,
    NoBoundaryContact,
    OffPlane,
    OverlapError,
    ParseError,
    UnsupportedVersion,
)

NETWORK_FORMAT = "dfnflow-network"
NETWORK_VERSION = 1

GEOM_REL_TOL = 1e-9
LEN_REL_TOL = 1e-8


def _unit(v):
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def _newell_normal(verts):
    # Newell's formula; |result| = 2 * polygon area, orientation follows
    # the loop (CCW when seen from the +normal side).
    v = np.asarray(verts, float)
    w = np.roll(v, -1, axis=0)
    return np.array(
        [
            np.sum((v[:, 1] - w[:, 1]) * (v[:, 2] + w[:, 2])),
            np.sum((v[:, 2] - w[:, 2]) * (v[:, 0] + w[:, 0])),
            np.sum((v[:, 0] - w[:, 0]) * (v[:, 1] + w[:, 1])),
        ]
    )


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


class Fracture:
    """One planar convex fracture with its own 2D frame.

    Parameters
    ----------
    fid : int
        1-based fracture id.
    vertices : (n, 3) array_like
        Polygon corners in loop order.  Either winding is accepted; the
        stored loop is counter-clockwise with respect to ``normal``.
    permeability : float or (2, 2) array_like
        Tangential permeability in frame coordinates.  A scalar ``k``
        means ``k * I``.  Must be symmetric positive definite.

    Raises
    ------
    DegenerateFracture
        For non-planar, non-convex or (near) zero-area polygons and for
        permeabilities that are not symmetric positive definite.
    """

    def __init__(self, fid, vertices, permeability=1.0):
        verts = np.array(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 3 or len(verts) < 3:
            raise DegenerateFracture(f"fracture {fid}: vertices must be (n >= 3, 3)")
        self.id = int(fid)

        center = verts.mean(axis=0)
        diam = float(np.max(np.linalg.norm(verts - center, axis=1))) * 2.0
        if diam == 0.0:
            raise DegenerateFracture(f"fracture {fid}: all vertices coincide")

        nrm = _newell_normal(verts)
        area2 = np.linalg.norm(nrm)
        if area2 <= 1e-12 * diam * diam:
            raise DegenerateFracture(f"fracture {fid}: polygon area is numerically zero")
        normal = nrm / area2

        off = (verts - center) @ normal
        tol = max(GEOM_REL_TOL * diam, 1e-14)
        if np.max(np.abs(off)) > tol:
            raise DegenerateFracture(
                f"fracture {fid}: vertices deviate from a plane by "
                f"{np.max(np.abs(off)):.3e} (tol {tol:.3e})"
            )

        e0 = verts[1] - verts[0]
        t1 = _unit(e0 - (e0 @ normal) * normal)
        t2 = np.cross(normal, t1)
        xy = (verts - center) @ np.column_stack([t1, t2])

        # convexity: every corner turn must be a left turn (CCW loop)
        a = np.roll(xy, -1, axis=0) - xy
        b = np.roll(a, -1, axis=0)
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        if np.min(cross) < -GEOM_REL_TOL * diam * diam:
            raise DegenerateFracture(f"fracture {fid}: polygon is not convex")

        if isinstance(permeability, numbers.Real):
            K = float(permeability) * np.eye(2)
        else:
            K = np.array(permeability, dtype=float)
        if K.shape != (2, 2) or abs(K[0, 1] - K[1, 0]) > 1e-12 * (abs(K).max() + 1.0):
            raise DegenerateFracture(f"fracture {fid}: permeability must be a symmetric 2x2")
        if np.min(np.linalg.eigvalsh(0.5 * (K + K.T))) <= 0.0:
            raise DegenerateFracture(f"fracture {fid}: permeability is not positive definite")

        self.origin = _freeze(center)
        self.normal = _freeze(normal)
        self.t1 = _freeze(t1)
        self.t2 = _freeze(t2)
        self.vertices = _freeze(verts)
        self.verts2 = _freeze(xy)
        self.permeability = _freeze(0.5 * (K + K.T))
        self.diameter = diam
        self.area = 0.5 * area2

    @property
    def nverts(self):
        return len(self.vertices)

    def to_local(self, pts, tol=None):
        """Map global 3D points to frame coordinates.

        Raises ``OffPlane`` when any point is farther than ``tol`` from the
        fracture plane (default ``1e-9 * diameter``).
        """
        p = np.atleast_2d(np.asarray(pts, float))
        if tol is None:
            tol = GEOM_REL_TOL * self.diameter
        d = p - self.origin
        off = d @ self.normal
        if np.max(np.abs(off)) > tol:
            raise OffPlane(
                f"point {np.abs(off).argmax()} is {np.max(np.abs(off)):.3e} off "
                f"the plane of fracture {self.id} (tol {tol:.3e})"
            )
        out = d @ np.column_stack([self.t1, self.t2])
        return out if np.asarray(pts).ndim == 2 else out[0]

    def to_global(self, pts2):
        """Map frame coordinates back to global 3D points."""
        p = np.atleast_2d(np.asarray(pts2, float))
        out = self.origin + np.outer(p[:, 0], self.t1) + np.outer(p[:, 1], self.t2)
        return out if np.asarray(pts2).ndim == 2 else out[0]

    def contains2(self, pts2, tol):
        """Vectorized membership test in frame coordinates."""
        p = np.atleast_2d(np.asarray(pts2, float))
        v = self.verts2
        inside = np.ones(len(p), dtype=bool)
        for k in range(len(v)):
            e = v[(k + 1) % len(v)] - v[k]
            # inward normal of a CCW edge is the left-hand rotation
            m = np.array([-e[1], e[0]])
            m /= np.linalg.norm(m)
            inside &= (p - v[k]) @ m >= -tol
        return inside if np.asarray(pts2).ndim == 2 else bool(inside[0])

    def contains(self, pts, tol):
        """Membership test for global 3D points (plane distance + polygon)."""
        p = np.atleast_2d(np.asarray(pts, float))
        d = p - self.origin
        on_plane = np.abs(d @ self.normal) <= tol
        xy = d @ np.column_stack([self.t1, self.t2])
        out = on_plane & self.contains2(xy, tol)
        return out if np.asarray(pts).ndim == 2 else bool(out[0])

    def boundary_distance2(self, pts2):
        """Distance from frame points to the polygon boundary."""
        p = np.atleast_2d(np.asarray(pts2, float))
        v = self.verts2
        best = np.full(len(p), np.inf)
        for k in range(len(v)):
            a, b = v[k], v[(k + 1) % len(v)]
            e = b - a
            L2 = e @ e
            t = np.clip(((p - a) @ e) / L2, 0.0, 1.0)
            proj = a + t[:, None] * e
            best = np.minimum(best, np.linalg.norm(p - proj, axis=1))
        return best if np.asarray(pts2).ndim == 2 else float(best[0])

    def __repr__(self):
        return f"Fracture(id={self.id}, nverts={self.nverts}, area={self.area:.4g})"


@dataclass(frozen=True)
class Trace:
    """Intersection segment of two fractures.

    ``i < j`` are the parent fracture ids; ``p0``/``p1`` are the global
    endpoints in lexicographic order.  ``on_boundary`` lists the parents
    whose polygon boundary contains the whole segment (T/L/Y contact);
    those parents see the trace one-sided.
    """

    id: int
    i: int
    j: int
    p0: np.ndarray
    p1: np.ndarray
    on_boundary: frozenset

    @property
    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def direction(self):
        return _unit(self.p1 - self.p0)

    @property
    def midpoint(self):
        return 0.5 * (self.p0 + self.p1)

    def point_at(self, t):
        """Point at arclength fraction ``t`` in [0, 1] from ``p0``."""
        t = np.asarray(t, float)
        return self.p0 + np.multiply.outer(t, self.p1 - self.p0)

    def param_of(self, pts):
        """Arclength fraction of (near-)trace points, unclipped."""
        p = np.atleast_2d(np.asarray(pts, float))
        d = self.p1 - self.p0
        t = (p - self.p0) @ d / (d @ d)
        return t if np.asarray(pts).ndim == 2 else float(t[0])

    def endpoints_local(self, fracture):
        """Trace endpoints in a parent fracture's frame, shape (2, 2)."""
        return fracture.to_local(np.array([self.p0, self.p1]))


def _clip_line_to_polygon(frac, a2, d2, tol):
    """Intersect the 2D line ``a2 + t * d2`` with a convex polygon.

    Returns ``(lo, hi)`` in the line parameter or None when the line
    misses the polygon.  ``tol`` is an absolute distance slack.
    """
    v = frac.verts2
    lo, hi = -np.inf, np.inf
    for k in range(len(v)):
        e = v[(k + 1) % len(v)] - v[k]
        m = np.array([-e[1], e[0]])
        mlen = np.linalg.norm(m)
        g = m @ d2
        c = m @ (a2 - v[k])
        if abs(g) <= 1e-14 * mlen:
            if c < -tol * mlen:
                return None
            continue
        bound = -c / g
        if g > 0.0:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    if hi <= lo:
        return None
    return lo, hi


def _convex_overlap_area(xy_a, xy_b):
    """Area of the intersection of two convex CCW polygons (2D)."""
    poly = [tuple(p) for p in xy_a]
    for k in range(len(xy_b)):
        a, b = xy_b[k], xy_b[(k + 1) % len(xy_b)]
        e = b - a
        m = (-e[1], e[0])  # inward for CCW
        out = []
        n = len(poly)
        for idx in range(n):
            p, q = np.array(poly[idx]), np.array(poly[(idx + 1) % n])
            dp = m[0] * (p[0] - a[0]) + m[1] * (p[1] - a[1])
            dq = m[0] * (q[0] - a[0]) + m[1] * (q[1] - a[1])
            if dp >= 0.0:
                out.append(tuple(p))
            if (dp > 0.0) != (dq > 0.0) and dp != dq:
                t = dp / (dp - dq)
                out.append(tuple(p + t * (q - p)))
        poly = out
        if len(poly) < 3:
            return 0.0
    arr = np.array(poly)
    x, y = arr[:, 0], arr[:, 1]
    return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _pair_segment(fa, fb, tol_geom, tol_len):
    """Intersection segment of two fractures, or None.

    Raises OverlapError for coplanar fractures overlapping with positive
    area.  Segments shorter than ``tol_len`` are discarded.
    """
    cr = np.cross(fa.normal, fb.normal)
    s = np.linalg.norm(cr)
    if s < 1e-12:
        # parallel planes: either disjoint or coplanar
        gap = abs((fb.origin - fa.origin) @ fa.normal)
        if gap > tol_geom:
            return None
        xy_b = fa.to_local(fb.vertices, tol=max(tol_geom, 10 * gap + 1e-15))
        if _convex_overlap_area(fa.verts2, xy_b) > tol_len * tol_len:
            raise OverlapError(
                f"fractures {fa.id} and {fb.id} are coplanar and overlap"
            )
        return None

    d = cr / s
    M = np.vstack([fa.normal, fb.normal, d])
    rhs = np.array([fa.normal @ fa.origin, fb.normal @ fb.origin, 0.0])
    p0 = np.linalg.solve(M, rhs)

    spans = []
    for f in (fa, fb):
        a2 = (p0 - f.origin) @ np.column_stack([f.t1, f.t2])
        d2 = d @ np.column_stack([f.t1, f.t2])
        span = _clip_line_to_polygon(f, a2, d2, tol_geom)
        if span is None:
            return None
        spans.append(span)
    t0 = max(spans[0][0], spans[1][0])
    t1 = min(spans[0][1], spans[1][1])
    if t1 - t0 <= tol_len:
        return None
    q0, q1 = p0 + t0 * d, p0 + t1 * d
    if tuple(q1) < tuple(q0):
        q0, q1 = q1, q0
    return q0, q1


def _segment_on_boundary(frac, p0, p1, tol):
    pts = frac.to_local(np.array([p0, 0.5 * (p0 + p1), p1]), tol=10 * tol)
    return bool(np.all(frac.boundary_distance2(pts) <= tol))


def compute_traces(fractures, tol_geom, tol_len):
    """All pairwise intersection segments of a fracture list.

    Returns
    -------
    traces : list of Trace
        Ids are 1-based in discovery order (sorted parent pairs).
    index : dict
        ``index[(i, j)] == index[(j, i)]`` is the trace id for the pair.

    Raises
    ------
    OverlapError
        For coplanar overlapping fractures and for three or more
        fractures meeting along one line with overlapping extents.
    """
    raw = []
    for fa, fb in combinations(fractures, 2):
        seg = _pair_segment(fa, fb, tol_geom, tol_len)
        if seg is None:
            continue
        q0, q1 = seg
        onb = frozenset(
            f.id for f in (fa, fb) if _segment_on_boundary(f, q0, q1, tol_geom)
        )
        raw.append((fa.id, fb.id, q0, q1, onb))

    # reject >= 3 fractures meeting along one line with overlapping extents
    for (ia, ja, a0, a1, _), (ib, jb, b0, b1, _) in combinations(raw, 2):
        da = _unit(a1 - a0)
        db = _unit(b1 - b0)
        if np.linalg.norm(np.cross(da, db)) > 1e-9:
            continue
        w = b0 - a0
        if np.linalg.norm(w - (w @ da) * da) > tol_geom:
            continue
        lo = max(0.0, min((b0 - a0) @ da, (b1 - a0) @ da))
        hi = min((a1 - a0) @ da, max((b0 - a0) @ da, (b1 - a0) @ da))
        if hi - lo > tol_len:
            raise OverlapError(
                f"fractures {sorted({ia, ja, ib, jb})} meet along a single "
                "line with overlapping extents"
            )

    traces = []
    index = {}
    for n, (i, j, q0, q1, onb) in enumerate(raw, start=1):
        traces.append(Trace(n, i, j, _freeze(q0), _freeze(q1), onb))
        index[(i, j)] = n
        index[(j, i)] = n
    return traces, index


@dataclass(frozen=True)
class BoundaryPortion:
    """One piece of a fracture boundary with its condition.

    ``edge`` indexes the polygon edge from vertex ``edge`` to ``edge + 1``;
    ``span`` is the parametric sub-range of that edge.  ``value`` is a
    number or a callable of global coordinates (programmatic use only;
    callables cannot be serialized to JSON).
    """

    fracture: int
    edge: int
    kind: str
    value: object = 0.0
    span: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise ParseError(f"unknown boundary kind {self.kind!r}")
        s0, s1 = self.span
        if not (0.0 <= s0 < s1 <= 1.0):
            raise NoBoundaryContact(
                f"portion span {self.span} on fracture {self.fracture} is empty"
            )

    def value_at(self, pts):
        """Evaluate the boundary value at global points (vectorized)."""
        p = np.atleast_2d(np.asarray(pts, float))
        if callable(self.value):
            out = np.array([float(self.value(q)) for q in p])
        else:
            out = np.full(len(p), float(self.value))
        return out if np.asarray(pts).ndim == 2 else float(out[0])


def _merge_intervals(ivals, tol):
    out = []
    for s0, s1 in sorted(ivals):
        if out and s0 <= out[-1][1] + tol:
            out[-1][1] = max(out[-1][1], s1)
        else:
            out.append([s0, s1])
    return out


class FractureNetwork:
    """A set of fractures with their traces and boundary conditions.

    Construction computes all traces, the pair index ``t(i, j)``, the two
    network tolerances, and completes the boundary specification: any part
    of a fracture boundary not covered by an explicit portion or by a
    boundary-touching trace gets a homogeneous Neumann portion.  The
    resulting portions partition every fracture boundary.

    Parameters
    ----------
    fractures : sequence of Fracture
        Ids must be exactly 1..N in order.
    boundary : sequence of BoundaryPortion
    require_dirichlet : bool
        Demand at least one Dirichlet portion somewhere (default True;
        turn off for building-block networks that get conditions later).
    """

    def __init__(self, fractures, boundary=(), require_dirichlet=True):
        fractures = list(fractures)
        if [f.id for f in fractures] != list(range(1, len(fractures) + 1)):
            raise ParseError("fracture ids must be 1..N in order")
        self.fractures = fractures

        allv = np.vstack([f.vertices for f in fractures])
        self.bbox = (_freeze(allv.min(axis=0)), _freeze(allv.max(axis=0)))
        self.diameter = float(np.linalg.norm(self.bbox[1] - self.bbox[0]))
        if self.diameter == 0.0:
            raise DegenerateFracture("network bounding box has zero diameter")
        self.tol_geom = GEOM_REL_TOL * self.diameter
        self.tol_len = LEN_REL_TOL * self.diameter

        self.traces, self.trace_index = compute_traces(
            fractures, self.tol_geom, self.tol_len
        )
        self.boundary = self._complete_boundary(list(boundary))

        if require_dirichlet and not any(
            p.kind == "dirichlet" for p in self.boundary
        ):
            raise ParseError("network has no Dirichlet boundary portion anywhere")

    # -- lookups ---------------------------------------------------------

    def fracture(self, fid):
        return self.fractures[fid - 1]

    def trace(self, tid):
        return self.traces[tid - 1]

    def t(self, i, j):
        """Trace id for the fracture pair, or None."""
        return self.trace_index.get((i, j))

    def traces_of(self, fid):
        return [t for t in self.traces if fid in (t.i, t.j)]

    def portions_of(self, fid):
        return [p for p in self.boundary if p.fracture == fid]

    # -- boundary handling ----------------------------------------------

    def _trace_spans_on_edge(self, frac, edge):
        """Parametric spans of boundary-touching traces on one edge."""
        v0 = frac.verts2[edge]
        v1 = frac.verts2[(edge + 1) % frac.nverts]
        e = v1 - v0
        L = np.linalg.norm(e)
        spans = []
        for tr in self.traces_of(frac.id):
            if frac.id not in tr.on_boundary:
                continue
            q = tr.endpoints_local(frac)
            t = (q - v0) @ e / (L * L)
            perp = q - v0 - np.outer(t, e)
            if np.max(np.linalg.norm(perp, axis=1)) > self.tol_geom:
                continue
            lo, hi = np.clip(sorted(t), 0.0, 1.0)
            if (hi - lo) * L > self.tol_len:
                spans.append((float(lo), float(hi), tr.id))
        return spans

    def _complete_boundary(self, portions):
        for p in portions:
            if not 1 <= p.fracture <= len(self.fractures):
                raise NoBoundaryContact(f"portion names unknown fracture {p.fracture}")
            if not 0 <= p.edge < self.fracture(p.fracture).nverts:
                raise NoBoundaryContact(
                    f"portion edge {p.edge} out of range on fracture {p.fracture}"
                )
        out = list(portions)
        for f in self.fractures:
            for k in range(f.nverts):
                L = np.linalg.norm(f.verts2[(k + 1) % f.nverts] - f.verts2[k])
                tol = self.tol_len / L
                occupied = [
                    (p.span[0], p.span[1])
                    for p in portions
                    if p.fracture == f.id and p.edge == k
                ]
                trace_spans = [(a, b) for a, b, _ in self._trace_spans_on_edge(f, k)]
                ivals = sorted(occupied + trace_spans)
                for (a0, a1), (b0, b1) in zip(ivals, ivals[1:]):
                    if b0 < a1 - tol:
                        raise ParseError(
                            f"boundary portions overlap on fracture {f.id} edge {k}"
                        )
                cursor = 0.0
                for s0, s1 in _merge_intervals(ivals, tol):
                    if s0 > cursor + tol:
                        out.append(
                            BoundaryPortion(f.id, k, "neumann", 0.0, (cursor, s0))
                        )
                    cursor = max(cursor, s1)
                if cursor < 1.0 - tol:
                    out.append(BoundaryPortion(f.id, k, "neumann", 0.0, (cursor, 1.0)))
        return out

    def edge_point(self, fid, edge, s):
        """Global point at parameter ``s`` of a fracture polygon edge."""
        f = self.fracture(fid)
        v0 = f.vertices[edge]
        v1 = f.vertices[(edge + 1) % f.nverts]
        return v0 + s * (v1 - v0)

    def __repr__(self):
        return (
            f"FractureNetwork({len(self.fractures)} fractures, "
            f"{len(self.traces)} traces)"
        )


# -- serialization -------------------------------------------------------


def network_to_dict(net):
    """JSON-ready dict for a network; rejects callable boundary values."""
    fracs = []
    for f in net.fractures:
        K = f.permeability
        if abs(K[0, 0] - K[1, 1]) < 1e-15 and abs(K[0, 1]) < 1e-15:
            perm = K[0, 0]
        else:
            perm = [[K[0, 0], K[0, 1]], [K[1, 0], K[1, 1]]]
        fracs.append(
            {"id": f.id, "vertices": f.vertices.tolist(), "permeability": perm}
        )
    bnd = []
    for p in net.boundary:
        if callable(p.value):
            raise ParseError(
                "callable boundary values cannot be serialized; networks with "
                "analytic data are programmatic-only"
            )
        entry = {
            "fracture": p.fracture,
            "edge": p.edge,
            "type": p.kind,
            "value": float(p.value),
        }
        if p.span != (0.0, 1.0):
            entry["span"] = [p.span[0], p.span[1]]
        bnd.append(entry)
    return {
        "format": NETWORK_FORMAT,
        "version": NETWORK_VERSION,
        "fractures": fracs,
        "boundary": bnd,
    }


def network_from_dict(data, require_dirichlet=True):
    """Build a FractureNetwork from a parsed JSON dict."""
    if not isinstance(data, dict):
        raise ParseError("network document must be a JSON object")
    if data.get("format", NETWORK_FORMAT) != NETWORK_FORMAT:
        raise ParseError(f"not a network document: format={data.get('format')!r}")
    version = data.get("version", 1)
    if version != NETWORK_VERSION:
        raise UnsupportedVersion(f"network version {version} not supported")
    if "fractures" not in data or not data["fractures"]:
        raise ParseError("network document has no fractures")

    fractures = []
    for n, rec in enumerate(data["fractures"], start=1):
        try:
            fid = int(rec.get("id", n))
            fractures.append(
                Fracture(fid, rec["vertices"], rec.get("permeability", 1.0))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad fracture record {n}: {exc}") from exc

    portions = []
    for n, rec in enumerate(data.get("boundary", [])):
        try:
            span = tuple(rec.get("span", (0.0, 1.0)))
            portions.append(
                BoundaryPortion(
                    int(rec["fracture"]),
                    int(rec["edge"]),
                    str(rec["type"]),
                    float(rec["value"]),
                    span,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad boundary record {n}: {exc}") from exc

    return FractureNetwork(fractures, portions, require_dirichlet=require_dirichlet)


def load_network(path, require_dirichlet=True):
    """Read a network JSON file."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    return network_from_dict(data, require_dirichlet=require_dirichlet)


def dump_network(net, path):
    """Write a network JSON file (deterministic layout)."""
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=2, sort_keys=True)
        fh.write("\n")
