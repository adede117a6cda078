"""Mesh containers shared by every discretization.

A ``FractureMesh`` is a 2D mesh in one fracture's frame: points, CCW cell
loops (triangles or convex polygons), and an edge table.  Edges lying on a
trace are stored once per adjacent cell ("doubled"), so a trace edge always
borders exactly one cell, like a boundary edge; the head is still a single
field per fracture, the doubling only separates the fluxes the two sides
exchange with the trace.  A ``NetworkMesh`` bundles the per-fracture meshes
with, for every trace, the ordered 1D partition each side induces.

Conformity classes
------------------
``matching``
    Every trace is a union of mesh edges in every parent and all sides
    share one global partition of the trace.
``conforming``
    Every trace is a union of mesh edges in every parent, but the parents
    subdivide it independently.
``nonmatching``
    Traces may cross cell interiors; the induced partition is computed by
    cutting the trace against the mesh edges.  Boundary-touching traces
    are still resolved by edges (the outer boundary is always matched).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptyTraceMesh, MeshFailure
from ..geometry import FractureNetwork  # noqa: F401  (typing/reference)

EDGE_INTERIOR = 0
EDGE_BOUNDARY = 1
EDGE_TRACE = 2

CONFORMITIES = ("matching", "conforming", "nonmatching")


def polygon_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def polygon_centroid(pts):
    x, y = pts[:, 0], pts[:, 1]
    cr = x * np.roll(y, -1) - np.roll(x, -1) * y
    a = 0.5 * np.sum(cr)
    cx = np.sum((x + np.roll(x, -1)) * cr) / (6.0 * a)
    cy = np.sum((y + np.roll(y, -1)) * cr) / (6.0 * a)
    return np.array([cx, cy])


def batch_cell_geometry(points, cells):
    """(area, centroid) for a list of polygon cells, batched by size."""
    area = np.zeros(len(cells))
    cent = np.zeros((len(cells), 2))
    sizes = np.array([len(c) for c in cells], dtype=np.int64)
    for k in np.unique(sizes):
        idx = np.flatnonzero(sizes == k)
        p = points[np.array([cells[i] for i in idx])]
        x, y = p[..., 0], p[..., 1]
        xn = np.roll(x, -1, axis=1)
        yn = np.roll(y, -1, axis=1)
        cr = x * yn - xn * y
        a = 0.5 * cr.sum(axis=1)
        area[idx] = a
        cent[idx, 0] = ((x + xn) * cr).sum(axis=1) / (6.0 * a)
        cent[idx, 1] = ((y + yn) * cr).sum(axis=1) / (6.0 * a)
    return area, cent


@dataclass
class TraceSide:
    """Ordered 1D partition a trace receives from one side of one fracture.

    ``params`` are increasing arclength fractions along the trace with
    ``params[0] = 0`` and ``params[-1] = 1``; interval ``m`` is backed by
    ``cells[m]`` and, when the trace is resolved by mesh edges, by mesh
    edge ``edges[m]`` (``edges is None`` for cut partitions on
    non-matching meshes).
    """

    trace: int
    fracture: int
    side: int
    params: np.ndarray
    cells: np.ndarray
    edges: np.ndarray | None

    @property
    def nintervals(self):
        return len(self.params) - 1


class FractureMesh:
    """2D mesh of one fracture in its frame coordinates."""

    def __init__(self, fracture, points, cells, edge_verts, edge_cells,
                 edge_kind, edge_ref, edge_side):
        self.fracture = fracture
        self.points = np.asarray(points, float)
        self.cells = [np.asarray(c, dtype=np.int64) for c in cells]
        self.edge_verts = np.asarray(edge_verts, dtype=np.int64)
        self.edge_cells = np.asarray(edge_cells, dtype=np.int64)
        self.edge_kind = np.asarray(edge_kind, dtype=np.uint8)
        self.edge_ref = np.asarray(edge_ref, dtype=np.int64)
        self.edge_side = np.asarray(edge_side, dtype=np.int8)
        self._compute_geometry()

    def _compute_geometry(self):
        self.ncells = len(self.cells)
        self.nedges = len(self.edge_verts)
        self.cell_area, self.cell_centroid = batch_cell_geometry(
            self.points, self.cells
        )
        pa = self.points[self.edge_verts[:, 0]]
        pb = self.points[self.edge_verts[:, 1]]
        self.edge_length = np.linalg.norm(pb - pa, axis=1)
        self.edge_midpoint = 0.5 * (pa + pb)

    @property
    def tri(self):
        """(ncells, 3) array when the mesh is all triangles, else None."""
        if all(len(c) == 3 for c in self.cells):
            return np.array(self.cells, dtype=np.int64)
        return None

    def max_diameter(self):
        best = 0.0
        for c in self.cells:
            p = self.points[c]
            d = p[:, None, :] - p[None, :, :]
            best = max(best, float(np.sqrt((d * d).sum(-1)).max()))
        return best

    def validate(self, tol):
        npts = len(self.points)
        if npts > 1:
            dist, _ = cKDTree(self.points).query(self.points, k=2)
            if np.min(dist[:, 1]) <= 0.1 * tol:
                raise MeshFailure(
                    f"fracture {self.fracture.id}: duplicate mesh points"
                )
        seen = {}
        for c, loop in enumerate(self.cells):
            if len(loop) < 3 or len(set(loop.tolist())) != len(loop):
                raise MeshFailure(
                    f"fracture {self.fracture.id}: malformed cell {c}"
                )
            if np.any(loop < 0) or np.any(loop >= npts):
                raise MeshFailure(
                    f"fracture {self.fracture.id}: cell {c} references "
                    "unknown points"
                )
            if self.cell_area[c] <= 0.0:
                raise MeshFailure(
                    f"fracture {self.fracture.id}: cell {c} is not CCW "
                    f"(area {self.cell_area[c]:.3e})"
                )
            for k in range(len(loop)):
                key = (loop[k], loop[(k + 1) % len(loop)])
                key = (min(key), max(key))
                seen.setdefault(key, []).append(c)
        # edge table must agree with the cell loops
        table = {}
        for e in range(self.nedges):
            key = (int(self.edge_verts[e, 0]), int(self.edge_verts[e, 1]))
            key = (min(key), max(key))
            table.setdefault(key, []).extend(
                int(c) for c in self.edge_cells[e] if c >= 0
            )
        for key, cells in seen.items():
            if sorted(table.get(key, [])) != sorted(cells):
                raise MeshFailure(
                    f"fracture {self.fracture.id}: edge table out of sync "
                    f"at edge {key}"
                )
            if len(cells) > 2:
                raise MeshFailure(
                    f"fracture {self.fracture.id}: edge {key} borders "
                    f"{len(cells)} cells"
                )
        kinds = self.edge_kind
        ncell_per_edge = np.sum(self.edge_cells >= 0, axis=1)
        if np.any(ncell_per_edge[kinds == EDGE_INTERIOR] != 2):
            raise MeshFailure(
                f"fracture {self.fracture.id}: interior edge without two cells"
            )
        if np.any(ncell_per_edge[kinds != EDGE_INTERIOR] != 1):
            raise MeshFailure(
                f"fracture {self.fracture.id}: boundary or trace edge with "
                "two cells"
            )
        cover = np.sum(self.cell_area) / self.fracture.area
        if abs(cover - 1.0) > 1e-6:
            raise MeshFailure(
                f"fracture {self.fracture.id}: cells cover {cover:.8f} of "
                "the polygon (overlap or hole)"
            )


def _edges_on_segment(mesh_points, edge_verts, q0, q1, tol):
    """Mask of edges whose both endpoints lie on segment q0-q1."""
    d = q1 - q0
    L2 = d @ d
    L = np.sqrt(L2)
    pa = mesh_points[edge_verts[:, 0]] - q0
    pb = mesh_points[edge_verts[:, 1]] - q0
    ta = pa @ d / L2
    tb = pb @ d / L2
    da = np.abs(pa[:, 0] * d[1] - pa[:, 1] * d[0]) / L
    db = np.abs(pb[:, 0] * d[1] - pb[:, 1] * d[0]) / L
    tp = tol / L
    on = (da <= tol) & (db <= tol)
    on &= (ta >= -tp) & (ta <= 1 + tp) & (tb >= -tp) & (tb <= 1 + tp)
    return on, 0.5 * (ta + tb)


def build_fracture_mesh(net, fid, points, cells, conformity):
    """Classify edges of a raw cell mesh and wrap it as a FractureMesh.

    ``conformity`` decides which traces must be resolved by edges: all of
    them for ``matching``/``conforming``, only boundary-touching ones for
    ``nonmatching``.
    """
    frac = net.fracture(fid)
    tol = net.tol_geom
    points = np.asarray(points, float)
    cells = [np.asarray(c, dtype=np.int64) for c in cells]

    raw = {}
    for c, loop in enumerate(cells):
        for k in range(len(loop)):
            a, b = int(loop[k]), int(loop[(k + 1) % len(loop)])
            key = (a, b) if a < b else (b, a)
            raw.setdefault(key, []).append(c)

    keys = list(raw.keys())
    ev = np.array(keys, dtype=np.int64)
    ncell = np.array([len(raw[k]) for k in keys])

    constrained = [
        tr for tr in net.traces_of(fid)
        if conformity != "nonmatching" or fid in tr.on_boundary
    ]
    on_trace = np.full(len(keys), 0, dtype=np.int64)  # trace id or 0
    for tr in constrained:
        q = tr.endpoints_local(frac)
        mask, _ = _edges_on_segment(points, ev, q[0], q[1], tol)
        on_trace[mask] = tr.id

    _, centroids = batch_cell_geometry(points, cells)

    edge_verts, edge_cells, edge_kind, edge_ref, edge_side = [], [], [], [], []
    portion_lookup = _PortionLookup(net, fid)
    for n, key in enumerate(keys):
        adj = raw[key]
        tid = int(on_trace[n])
        if tid > 0:
            tr = net.trace(tid)
            q = tr.endpoints_local(frac)
            d = q[1] - q[0]
            for c in adj:
                off = centroids[c] - q[0]
                left = d[0] * off[1] - d[1] * off[0] > 0.0
                side = 0 if (len(adj) == 1 or left) else 1
                edge_verts.append(key)
                edge_cells.append((c, -1))
                edge_kind.append(EDGE_TRACE)
                edge_ref.append(tid)
                edge_side.append(side)
        elif len(adj) == 2:
            edge_verts.append(key)
            edge_cells.append((adj[0], adj[1]))
            edge_kind.append(EDGE_INTERIOR)
            edge_ref.append(0)
            edge_side.append(0)
        else:
            mid = 0.5 * (points[key[0]] + points[key[1]])
            pidx = portion_lookup.find(mid, tol)
            if pidx is None:
                raise MeshFailure(
                    f"fracture {fid}: single-cell edge at {mid} matches no "
                    "boundary portion or trace"
                )
            edge_verts.append(key)
            edge_cells.append((adj[0], -1))
            edge_kind.append(EDGE_BOUNDARY)
            edge_ref.append(pidx)
            edge_side.append(0)

    return FractureMesh(
        frac, points, cells, edge_verts, edge_cells, edge_kind, edge_ref,
        edge_side,
    )


class _PortionLookup:
    """Map boundary-edge midpoints to indices into net.boundary."""

    def __init__(self, net, fid):
        frac = net.fracture(fid)
        self.frac = frac
        self.entries = []  # (polygon edge, s0, s1, portion index)
        for idx, p in enumerate(net.boundary):
            if p.fracture == fid:
                self.entries.append((p.edge, p.span[0], p.span[1], idx))

    def find(self, mid, tol):
        v = self.frac.verts2
        n = len(v)
        for k in range(n):
            a, b = v[k], v[(k + 1) % n]
            e = b - a
            L = np.linalg.norm(e)
            t = (mid - a) @ e / (L * L)
            dist = abs((mid[0] - a[0]) * e[1] - (mid[1] - a[1]) * e[0]) / L
            if dist <= tol and -tol / L <= t <= 1 + tol / L:
                for edge, s0, s1, idx in self.entries:
                    if edge == k and s0 - tol / L <= t <= s1 + tol / L:
                        return idx
        return None


def _segment_cut_params(mesh, q0, q1, tol):
    """Params where segment q0-q1 crosses mesh edges (open interval)."""
    d = q1 - q0
    L2 = d @ d
    pa = mesh.points[mesh.edge_verts[:, 0]]
    pb = mesh.points[mesh.edge_verts[:, 1]]
    e = pb - pa
    w = pa - q0
    den = d[0] * e[:, 1] - d[1] * e[:, 0]
    ok = np.abs(den) > 1e-14 * np.sqrt(L2) * mesh.edge_length
    t = np.full(len(pa), -1.0)
    s = np.full(len(pa), -1.0)
    t[ok] = (w[ok, 0] * e[ok, 1] - w[ok, 1] * e[ok, 0]) / den[ok]
    s[ok] = (w[ok, 0] * d[1] - w[ok, 1] * d[0]) / den[ok]
    tp = tol / np.sqrt(L2)
    hit = ok & (t > tp) & (t < 1 - tp) & (s >= -1e-12) & (s <= 1 + 1e-12)
    return np.sort(t[hit])


def _locate_cells(mesh, pts, tol):
    """Containing cell for each 2D point (brute force, vectorized per cell)."""
    out = np.full(len(pts), -1, dtype=np.int64)
    todo = np.ones(len(pts), dtype=bool)
    for c, loop in enumerate(mesh.cells):
        if not todo.any():
            break
        v = mesh.points[loop]
        inside = np.ones(len(pts), dtype=bool)
        for k in range(len(v)):
            e = v[(k + 1) % len(v)] - v[k]
            inside &= (
                e[0] * (pts[:, 1] - v[k][1]) - e[1] * (pts[:, 0] - v[k][0])
            ) >= -tol * np.linalg.norm(e)
        newly = todo & inside
        out[newly] = c
        todo &= ~inside
    return out


def cut_trace_partition(mesh, trace, frac, tol):
    """Partition of a trace induced by cutting it through cell interiors."""
    q = trace.endpoints_local(frac)
    params = _segment_cut_params(mesh, q[0], q[1], tol)
    L = np.linalg.norm(q[1] - q[0])
    knots = [0.0]
    for t in params:
        if t - knots[-1] > tol / L:
            knots.append(float(t))
    if 1.0 - knots[-1] > tol / L:
        knots.append(1.0)
    else:
        knots[-1] = 1.0
    knots = np.array(knots)
    mids2 = q[0] + 0.5 * (knots[:-1] + knots[1:])[:, None] * (q[1] - q[0])
    owner = _locate_cells(mesh, mids2, tol)
    if np.any(owner < 0):
        raise MeshFailure(
            f"trace {trace.id}: could not locate a cut interval in "
            f"fracture {frac.id}"
        )
    # merge neighbours that landed in the same cell (grazing contacts)
    keep_knots = [knots[0]]
    cells = [owner[0]]
    for m in range(1, len(owner)):
        if owner[m] == cells[-1]:
            continue
        keep_knots.append(knots[m])
        cells.append(owner[m])
    keep_knots.append(knots[-1])
    return TraceSide(
        trace.id, frac.id, 0, np.array(keep_knots), np.array(cells), None
    )


def extract_trace_sides(net, mesh, fid, conformity):
    """All TraceSide records one fracture contributes."""
    frac = net.fracture(fid)
    tol = net.tol_geom
    out = []
    for tr in net.traces_of(fid):
        q = tr.endpoints_local(frac)
        L = np.linalg.norm(q[1] - q[0])
        d = q[1] - q[0]
        sel = np.flatnonzero(
            (mesh.edge_kind == EDGE_TRACE) & (mesh.edge_ref == tr.id)
        )
        if len(sel) == 0:
            if conformity == "nonmatching" and fid not in tr.on_boundary:
                out.append(cut_trace_partition(mesh, tr, frac, tol))
                continue
            raise EmptyTraceMesh(
                f"trace {tr.id} got no edges in fracture {fid}"
            )
        sides = sorted(set(int(s) for s in mesh.edge_side[sel]))
        expected = [0] if fid in tr.on_boundary else [0, 1]
        if sides != expected:
            raise EmptyTraceMesh(
                f"trace {tr.id} in fracture {fid}: sides {sides} present, "
                f"expected {expected}"
            )
        for side in sides:
            es = sel[mesh.edge_side[sel] == side]
            t0 = (mesh.points[mesh.edge_verts[es, 0]] - q[0]) @ d / (L * L)
            t1 = (mesh.points[mesh.edge_verts[es, 1]] - q[0]) @ d / (L * L)
            lo = np.minimum(t0, t1)
            hi = np.maximum(t0, t1)
            order = np.argsort(lo)
            es, lo, hi = es[order], lo[order], hi[order]
            tp = tol / L
            if abs(lo[0]) > tp or abs(hi[-1] - 1.0) > tp:
                raise MeshFailure(
                    f"trace {tr.id} side {side} in fracture {fid} does not "
                    f"span the trace ({lo[0]:.3e}..{hi[-1]:.3e})"
                )
            if np.any(np.abs(hi[:-1] - lo[1:]) > tp):
                raise MeshFailure(
                    f"trace {tr.id} side {side} in fracture {fid} has gaps"
                )
            params = np.concatenate([[0.0], 0.5 * (hi[:-1] + lo[1:]), [1.0]])
            cells = mesh.edge_cells[es, 0]
            out.append(TraceSide(tr.id, fid, side, params, cells, es))
    return out


class NetworkMesh:
    """Per-fracture meshes plus per-trace side partitions."""

    def __init__(self, net, fracture_meshes, conformity, quality_violations=0):
        if conformity not in CONFORMITIES:
            raise MeshFailure(f"unknown conformity class {conformity!r}")
        self.network = net
        self.fracture_meshes = list(fracture_meshes)
        self.conformity = conformity
        self.quality_violations = quality_violations
        self.trace_sides = {tr.id: [] for tr in net.traces}
        for fm in self.fracture_meshes:
            for rec in extract_trace_sides(net, fm, fm.fracture.id, conformity):
                self.trace_sides[rec.trace].append(rec)

    def mesh_of(self, fid):
        return self.fracture_meshes[fid - 1]

    @property
    def ncells(self):
        return sum(fm.ncells for fm in self.fracture_meshes)

    def max_diameter(self):
        return max(fm.max_diameter() for fm in self.fracture_meshes)

    def sides_of(self, tid, fid=None):
        recs = self.trace_sides[tid]
        if fid is None:
            return recs
        return [r for r in recs if r.fracture == fid]

    def validate(self):
        net = self.network
        for fm in self.fracture_meshes:
            fm.validate(net.tol_geom)
        for tr in net.traces:
            recs = self.trace_sides[tr.id]
            for fid in (tr.i, tr.j):
                want = 1 if (fid in tr.on_boundary or (
                    self.conformity == "nonmatching"
                    and fid not in tr.on_boundary
                )) else 2
                have = len([r for r in recs if r.fracture == fid])
                if have != want:
                    raise EmptyTraceMesh(
                        f"trace {tr.id}: fracture {fid} contributes {have} "
                        f"sides, expected {want}"
                    )
            if self.conformity == "matching":
                base = recs[0].params
                tolp = net.tol_geom / max(tr.length, net.tol_len)
                for r in recs[1:]:
                    if len(r.params) != len(base) or np.max(
                        np.abs(r.params - base)
                    ) > tolp:
                        raise MeshFailure(
                            f"trace {tr.id}: partitions do not match across "
                            "sides on a matching-class mesh"
                        )
        return self
