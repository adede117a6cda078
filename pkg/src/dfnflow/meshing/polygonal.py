"""Polygonal mesh transformations.

``cut_to_polygons`` slices the cells of a non-matching mesh along the
traces so every trace becomes a union of cell edges on each fracture
separately (the output is per-fracture-conforming with polygonal cells).
``restore_conformity`` upgrades a per-fracture-conforming mesh to a
matching one by inserting the other side's trace breakpoints as flat
vertices.  ``agglomerate`` glues small cells onto neighbors, which is the
coarsening step behind the agglomerated mixed-method variant.
"""

from __future__ import annotations

import heapq
import math
import warnings

import numpy as np
from scipy.spatial import cKDTree

from ..errors import MeshFailure, SliverPolygon
from .core import (
    EDGE_TRACE,
    NetworkMesh,
    build_fracture_mesh,
)

SLIVER_REL_AREA = 1e-10


class _PointPool:
    """Indexed 2D points with tolerance-based identification."""

    def __init__(self, tol, seed=None):
        self._tol = tol
        self._cell = max(4.0 * tol, 1e-300)
        self._bins = {}
        self.points = []
        if seed is not None:
            for p in seed:
                self.index(p)

    def index(self, p):
        x, y = float(p[0]), float(p[1])
        bx = int(math.floor(x / self._cell))
        by = int(math.floor(y / self._cell))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for i in self._bins.get((bx + dx, by + dy), ()):
                    q = self.points[i]
                    if abs(q[0] - x) <= self._tol and abs(q[1] - y) <= self._tol:
                        return i
        self.points.append((x, y))
        idx = len(self.points) - 1
        self._bins.setdefault((bx, by), []).append(idx)
        return idx

    def array(self):
        return np.array(self.points, float)


def _loop_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _split_loop(poly, p0, d, tol):
    """Split a convex CCW loop by the line through ``p0`` along ``d``.

    Returns (left, right) vertex-coordinate lists, or None when the line
    does not properly cross the polygon.  Vertices within ``tol`` of the
    line are shared by both sides, which keeps slivers thinner than the
    tolerance from ever being created.
    """
    nd = np.linalg.norm(d)
    s = (d[0] * (poly[:, 1] - p0[1]) - d[1] * (poly[:, 0] - p0[0])) / nd
    tag = np.where(s > tol, 1, np.where(s < -tol, -1, 0))
    if not (np.any(tag > 0) and np.any(tag < 0)):
        return None
    left, right = [], []
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        ta, tb = tag[k], tag[(k + 1) % n]
        if ta >= 0:
            left.append(a)
        if ta <= 0:
            right.append(a)
        if ta * tb < 0:
            w = s[k] / (s[k] - s[(k + 1) % n])
            left.append(a + w * (b - a))
            right.append(left[-1])
    return left, right


def _insert_online(loop_pts, p0, d, t_new, tol):
    """Insert points at line params ``t_new`` into the loop edge that lies
    on the line through p0 along d.  Coordinates, in place on a list."""
    L2 = d @ d
    nd = math.sqrt(L2)
    k = 0
    while k < len(loop_pts):
        a = loop_pts[k]
        b = loop_pts[(k + 1) % len(loop_pts)]
        da = abs(d[0] * (a[1] - p0[1]) - d[1] * (a[0] - p0[0])) / nd
        db = abs(d[0] * (b[1] - p0[1]) - d[1] * (b[0] - p0[0])) / nd
        if da <= tol and db <= tol:
            ta = (a - p0) @ d / L2
            tb = (b - p0) @ d / L2
            lo, hi = min(ta, tb), max(ta, tb)
            inside = sorted(
                (t for t in t_new if lo + tol / nd < t < hi - tol / nd),
                reverse=bool(ta > tb),
            )
            for m, t in enumerate(inside):
                loop_pts.insert(k + 1 + m, p0 + t * d)
            k += len(inside)
        k += 1
    return loop_pts


def cut_to_polygons(nm):
    """Cut the cells of a non-matching mesh into trace-conforming polygons.

    Every cell crossed by a trace is split along the full chord of the
    trace line through the cell; trace endpoints interior to a cell become
    hanging flat vertices on the chord.  Pieces with area below
    ``SLIVER_REL_AREA`` times their parent cell are merged onto the
    neighbor sharing the longest non-trace edge (with a SliverPolygon
    warning).  Returns a per-fracture-conforming polygonal NetworkMesh.
    """
    if nm.conformity != "nonmatching":
        raise MeshFailure("cut_to_polygons expects a non-matching mesh")
    net = nm.network
    fmeshes = []
    for fm in nm.fracture_meshes:
        fid = fm.fracture.id
        frac = fm.fracture
        tol = net.tol_geom
        pieces = [
            {"pts": [fm.points[i] for i in c], "parent": float(fm.cell_area[k])}
            for k, c in enumerate(fm.cells)
        ]
        for tr in net.traces_of(fid):
            if fid in tr.on_boundary:
                continue  # already resolved by boundary edges
            q = tr.endpoints_local(frac)
            d = q[1] - q[0]
            L2 = d @ d
            out = []
            for piece in pieces:
                poly = np.asarray(piece["pts"], float)
                split = _split_loop(poly, q[0], d, tol)
                if split is None:
                    out.append(piece)
                    continue
                # chord params along the trace line; cut only when the
                # chord overlaps the trace span (tip cells included)
                tline = (poly - q[0]) @ d / L2
                t_in, t_out = float(tline.min()), float(tline.max())
                tp = tol / math.sqrt(L2)
                if min(t_out, 1.0) - max(t_in, 0.0) <= tp:
                    out.append(piece)
                    continue
                tips = [t for t in (0.0, 1.0) if t_in + tp < t < t_out - tp]
                for half in split:
                    half = _insert_online(list(half), q[0], d, tips, tol)
                    out.append({"pts": half, "parent": piece["parent"]})
            pieces = out

        pool = _PointPool(tol)
        loops = []
        parents = []
        for piece in pieces:
            idx = [pool.index(p) for p in piece["pts"]]
            loop = [i for k, i in enumerate(idx) if i != idx[(k + 1) % len(idx)]]
            if len(set(loop)) < 3:
                continue  # collapsed by tolerance snapping
            loops.append(loop)
            parents.append(piece["parent"])
        pts = pool.array()
        loops = _complete_hanging(pts, loops, tol)
        loops = _merge_slivers(net, frac, pts, loops, parents, tol)
        fmeshes.append(
            build_fracture_mesh(
                net, fid, pts, [np.array(lp, dtype=np.int64) for lp in loops],
                "conforming",
            )
        )
    out = NetworkMesh(net, fmeshes, "conforming", nm.quality_violations)
    out.validate()
    return out


def _complete_hanging(pts, loops, tol):
    """Insert pool points that lie strictly inside some loop edge.

    A chord ending on the edge of an uncut neighbor (trace tips) leaves a
    vertex the neighbor's loop does not know about; every loop must list
    every mesh point on its boundary or edge adjacency breaks.
    """
    tree = cKDTree(pts)
    out = []
    for loop in loops:
        cur = list(loop)
        k = 0
        while k < len(cur):
            a = pts[cur[k]]
            b = pts[cur[(k + 1) % len(cur)]]
            e = b - a
            L = np.linalg.norm(e)
            cand = tree.query_ball_point(0.5 * (a + b), 0.5 * L)
            ins = []
            for i in cand:
                if i == cur[k] or i == cur[(k + 1) % len(cur)]:
                    continue
                w = pts[i] - a
                t = w @ e / (L * L)
                if not (tol / L < t < 1 - tol / L):
                    continue
                if abs(w[0] * e[1] - w[1] * e[0]) / L <= tol:
                    ins.append((t, i))
            for m, (_, i) in enumerate(sorted(ins)):
                cur.insert(k + 1 + m, i)
            k += 1 + len(ins)
        out.append(cur)
    return out


def _shared_chain(la, lb):
    """(start, run length) of the contiguous edge run shared by two CCW
    loops, or None when absent or split into several runs."""
    ea = {}
    for k in range(len(la)):
        ea[(la[k], la[(k + 1) % len(la)])] = k
    eb = {(lb[k], lb[(k + 1) % len(lb)]) for k in range(len(lb))}
    mark = np.zeros(len(la), dtype=bool)
    for (u, v), k in ea.items():
        if (v, u) in eb:
            mark[k] = True
    if not mark.any():
        return None
    if mark.all():
        return None  # identical boundaries, not a valid merge
    starts = [
        k for k in range(len(la)) if mark[k] and not mark[k - 1]
    ]
    if len(starts) != 1:
        return None
    return starts[0], int(mark.sum())


def _union_loops(la, lb):
    """Union polygon of two CCW loops sharing one contiguous edge chain.

    Returns the merged CCW loop or None when the loops do not share a
    single chain or the union would not be a simple polygon.
    """
    ch = _shared_chain(la, lb)
    if ch is None:
        return None
    s, n = ch
    m = len(la)
    head = [la[(s + n + k) % m] for k in range(m - n + 1)]  # chain end -> start
    j = lb.index(la[s])
    tail = []
    p = (j + 1) % len(lb)
    while lb[p] != la[(s + n) % m]:
        tail.append(lb[p])
        p = (p + 1) % len(lb)
        if len(tail) > len(lb):
            return None
    out = head + tail
    if len(set(out)) != len(out):
        return None  # pinch point, union not simple
    return out


def _merge_slivers(net, frac, pts, loops, parents, tol):
    """Merge sub-tolerance pieces onto the neighbor sharing the longest
    non-trace edge."""
    areas = [float(_loop_area(pts[np.asarray(lp)])) for lp in loops]
    small = [
        k for k in range(len(loops))
        if areas[k] < SLIVER_REL_AREA * max(parents[k], tol * tol)
    ]
    if not small:
        return loops
    trace_pairs = _trace_vertex_pairs(net, frac, pts, loops, tol)
    alive = [True] * len(loops)
    for k in small:
        owner = {}
        for c, lp in enumerate(loops):
            if not alive[c] or c == k:
                continue
            for t in range(len(lp)):
                owner[(lp[t], lp[(t + 1) % len(lp)])] = c
        lp = loops[k]
        shared = {}
        for t in range(len(lp)):
            u, v = lp[t], lp[(t + 1) % len(lp)]
            if (min(u, v), max(u, v)) in trace_pairs:
                continue
            c = owner.get((v, u))
            if c is not None:
                shared[c] = shared.get(c, 0.0) + float(
                    np.linalg.norm(pts[u] - pts[v])
                )
        merged = False
        for c in sorted(shared, key=lambda c: -shared[c]):
            union = _union_loops(loops[c], loops[k])
            if union is not None:
                warnings.warn(
                    f"fracture {frac.id}: sliver cell of area "
                    f"{areas[k]:.3e} merged into a neighbor",
                    SliverPolygon,
                )
                loops[c] = union
                alive[k] = False
                merged = True
                break
        if not merged:
            warnings.warn(
                f"fracture {frac.id}: sliver cell of area {areas[k]:.3e} "
                "has no mergeable neighbor and was kept",
                SliverPolygon,
            )
    return [lp for c, lp in enumerate(loops) if alive[c]]


def _trace_vertex_pairs(net, frac, pts, loops, tol):
    """Undirected vertex pairs of loop edges that lie on some trace."""
    pairs = set()
    ev = set()
    for lp in loops:
        for t in range(len(lp)):
            u, v = lp[t], lp[(t + 1) % len(lp)]
            ev.add((min(u, v), max(u, v)))
    ev = np.array(sorted(ev), dtype=np.int64)
    if len(ev) == 0:
        return pairs
    for tr in net.traces_of(frac.id):
        q = tr.endpoints_local(frac)
        d = q[1] - q[0]
        L2 = d @ d
        L = math.sqrt(L2)
        pa = pts[ev[:, 0]] - q[0]
        pb = pts[ev[:, 1]] - q[0]
        da = np.abs(pa[:, 0] * d[1] - pa[:, 1] * d[0]) / L
        db = np.abs(pb[:, 0] * d[1] - pb[:, 1] * d[0]) / L
        ta = pa @ d / L2
        tb = pb @ d / L2
        tp = tol / L
        on = (da <= tol) & (db <= tol)
        on &= (ta >= -tp) & (ta <= 1 + tp) & (tb >= -tp) & (tb <= 1 + tp)
        for u, v in ev[on]:
            pairs.add((int(u), int(v)))
    return pairs


def restore_conformity(nm):
    """Insert the other side's trace breakpoints so both parents share the
    merged partition.  Cells only gain flat (collinear) vertices; areas
    are unchanged.  Idempotent; matching input is returned as is."""
    if nm.conformity == "matching":
        return nm
    if nm.conformity != "conforming":
        raise MeshFailure(
            "restore_conformity expects a per-fracture-conforming mesh"
        )
    net = nm.network
    merged = {}
    for tr in net.traces:
        knots = np.concatenate([r.params for r in nm.trace_sides[tr.id]])
        knots = np.sort(knots)
        tolp = net.tol_geom / max(tr.length, net.tol_len)
        keep = [float(knots[0])]
        for t in knots[1:]:
            if t - keep[-1] > tolp:
                keep.append(float(t))
        keep[-1] = 1.0
        merged[tr.id] = keep

    fmeshes = []
    for fm in nm.fracture_meshes:
        fid = fm.fracture.id
        frac = fm.fracture
        tol = net.tol_geom
        pool = _PointPool(tol, seed=fm.points)
        loops = []
        for c in fm.cells:
            cur = [np.asarray(fm.points[i], float) for i in c]
            for tr in net.traces_of(fid):
                q = tr.endpoints_local(frac)
                cur = _insert_online(cur, q[0], q[1] - q[0], merged[tr.id], tol)
            loops.append([pool.index(p) for p in cur])
        fmeshes.append(
            build_fracture_mesh(
                net, fid, pool.array(),
                [np.array(lp, dtype=np.int64) for lp in loops], "matching",
            )
        )
    out = NetworkMesh(net, fmeshes, "matching", nm.quality_violations)
    out.validate()
    return out


def agglomerate(nm, area_threshold):
    """Glue cells smaller than ``area_threshold`` onto neighbors.

    Greedy smallest-first; each small cell merges with the neighbor
    sharing the longest common (non-trace) edge chain, skipping unions
    that would not be simple polygons.  Trace and boundary edges are
    preserved, so trace partitions and boundary data survive unchanged.
    """
    net = nm.network
    fmeshes = []
    for fm in nm.fracture_meshes:
        fid = fm.fracture.id
        loops = [list(map(int, c)) for c in fm.cells]
        pts = fm.points
        trace_pairs = set()
        for e in np.flatnonzero(fm.edge_kind == EDGE_TRACE):
            u, v = int(fm.edge_verts[e, 0]), int(fm.edge_verts[e, 1])
            trace_pairs.add((min(u, v), max(u, v)))
        loops = _agglomerate_loops(pts, loops, trace_pairs, area_threshold)
        fmeshes.append(
            build_fracture_mesh(
                net, fid, pts, [np.array(lp, dtype=np.int64) for lp in loops],
                nm.conformity,
            )
        )
    out = NetworkMesh(net, fmeshes, nm.conformity, nm.quality_violations)
    out.validate()
    return out


def _agglomerate_loops(pts, loops, trace_pairs, threshold):
    if threshold <= 0.0 or len(loops) <= 1:
        return loops
    alive = [True] * len(loops)
    areas = [float(_loop_area(pts[np.asarray(lp)])) for lp in loops]
    version = [0] * len(loops)

    def owner_map():
        own = {}
        for c, lp in enumerate(loops):
            if alive[c]:
                for t in range(len(lp)):
                    own[(lp[t], lp[(t + 1) % len(lp)])] = c
        return own

    # sweeps keep going while merges happen: a cell whose every neighbor
    # union is momentarily non-simple can succeed after others merge
    while True:
        own = owner_map()
        heap = [
            (areas[c], c, version[c]) for c in range(len(loops))
            if alive[c] and areas[c] < threshold
        ]
        heapq.heapify(heap)
        merged_any = False
        while heap:
            a, k, ver = heapq.heappop(heap)
            if not alive[k] or ver != version[k] or areas[k] >= threshold:
                continue
            lp = loops[k]
            shared = {}
            for t in range(len(lp)):
                u, v = lp[t], lp[(t + 1) % len(lp)]
                if (min(u, v), max(u, v)) in trace_pairs:
                    continue
                c = own.get((v, u))
                if c is not None and c != k and alive[c]:
                    shared[c] = shared.get(c, 0.0) + float(
                        np.linalg.norm(pts[u] - pts[v])
                    )
            for c in sorted(shared, key=lambda c: -shared[c]):
                union = _union_loops(loops[c], loops[k])
                if union is None:
                    continue
                for t in range(len(loops[c])):
                    own.pop((loops[c][t], loops[c][(t + 1) % len(loops[c])]), None)
                for t in range(len(lp)):
                    own.pop((lp[t], lp[(t + 1) % len(lp)]), None)
                loops[c] = union
                for t in range(len(union)):
                    own[(union[t], union[(t + 1) % len(union)])] = c
                areas[c] += areas[k]
                alive[k] = False
                version[c] += 1
                merged_any = True
                if areas[c] < threshold:
                    heapq.heappush(heap, (areas[c], c, version[c]))
                break
        if not merged_any:
            break
        if not any(alive[c] and areas[c] < threshold for c in range(len(loops))):
            break
    return [lp for c, lp in enumerate(loops) if alive[c]]
