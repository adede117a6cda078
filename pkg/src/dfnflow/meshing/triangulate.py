"""Triangle meshing of fracture networks.

Per fracture the generator assembles the required subsegments: boundary
chains split at portion endpoints and trace contacts, and trace chains
taken either from one global per-trace partition shared by every parent
(matching class) or from a per-fracture subdivision (conforming class);
on non-matching meshes only boundary-touching traces are constrained.
An interior lattice is placed and carved away from the diametral disks
of required subsegments, so scipy's Delaunay triangulation contains the
required edges by the Gabriel criterion; any edge it still misses is
recovered by retriangulating the cavity of crossed triangles.  Batched
Ruppert-style refinement rounds then fix minimum angle and size, with
midpoint splits of encroached splittable subsegments and a local feature
size floor that makes sharp trace wedges refine geometrically instead of
forever.  Partitions place geometrically graded "shell" breakpoints
around trace crossing points, matched across all traces through the
point and scaled with the local wedge width, which keeps the shared
subsegments Delaunay even at very small crossing angles.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from ..errors import MeshFailure
from .core import NetworkMesh, build_fracture_mesh, polygon_centroid

MIN_ANGLE_DEG = 15.0
SIZE_FACTOR = 0.75       # refine when circumradius > SIZE_FACTOR * h
LFS_FACTOR = 0.7         # but never below LFS_FACTOR * distance-to-segments
MAX_ROUNDS = 12
MAX_POINTS = 60000


# -- required-feature assembly ------------------------------------------


def _trace_crossing_points(net):
    """Crossing/touch points of trace pairs, merged across fractures.

    Returns a list of dicts with keys ``point`` (3D), ``params`` (trace id
    to arclength fraction) and ``angle`` (smallest crossing angle there).
    """
    hits = []  # (3D point, tid_a, ta, tid_b, tb, angle)
    for f in net.fractures:
        trs = net.traces_of(f.id)
        for a in range(len(trs)):
            for b in range(a + 1, len(trs)):
                ta, tb = trs[a], trs[b]
                qa = ta.endpoints_local(f)
                qb = tb.endpoints_local(f)
                da, db = qa[1] - qa[0], qb[1] - qb[0]
                den = da[0] * db[1] - da[1] * db[0]
                La, Lb = np.linalg.norm(da), np.linalg.norm(db)
                if abs(den) < 1e-12 * La * Lb:
                    continue
                w = qb[0] - qa[0]
                sa = (w[0] * db[1] - w[1] * db[0]) / den
                sb = (w[0] * da[1] - w[1] * da[0]) / den
                eps_a = net.tol_geom / La
                eps_b = net.tol_geom / Lb
                if not (-eps_a <= sa <= 1 + eps_a and -eps_b <= sb <= 1 + eps_b):
                    continue
                sa = min(max(sa, 0.0), 1.0)
                sb = min(max(sb, 0.0), 1.0)
                ang = math.asin(min(abs(den) / (La * Lb), 1.0))
                hits.append((ta.point_at(sa), ta.id, sa, tb.id, sb, ang))
    merged = []
    for p, ia, sa, ib, sb, ang in hits:
        for rec in merged:
            if np.linalg.norm(rec["point"] - p) <= net.tol_geom:
                rec["params"].setdefault(ia, sa)
                rec["params"].setdefault(ib, sb)
                rec["angle"] = min(rec["angle"], ang)
                break
        else:
            merged.append({"point": p, "params": {ia: sa, ib: sb}, "angle": ang})
    return merged


def _partition_1d(length, h, features, shells, eps):
    """Breakpoints in [0, 1] for one trace.

    ``features`` are parameters that must appear (crossings); ``shells``
    maps a feature parameter to (r_min, r_max, ratio) ladder radii in
    length units; shell breakpoints sit at geometrically spaced radii
    around the feature.  Gaps wider than the target spacing are filled
    uniformly.  ``eps`` is the merge tolerance in parameter units.
    """
    hl = h / length
    feats = sorted({0.0, 1.0} | {min(max(float(f), 0.0), 1.0) for f in features})
    cf = [feats[0]]
    for t in feats[1:]:
        if t - cf[-1] > eps:
            cf.append(t)
    cf[0], cf[-1] = 0.0, 1.0
    pts = list(cf)
    for tc, (r_min, r_max, ratio) in shells.items():
        tc = min(cf, key=lambda s: abs(s - tc))
        near = [abs(f - tc) for f in cf if abs(f - tc) > eps]
        room = 0.5 * min(near) * length if near else length
        r = r_min
        while r <= min(r_max, room):
            for s in (-1.0, 1.0):
                t = tc + s * r / length
                if eps < t < 1.0 - eps:
                    pts.append(t)
            r *= ratio
    pts = sorted(set(pts))
    featset = set(cf)
    clusters = [[pts[0]]]
    for t in pts[1:]:
        if t - clusters[-1][-1] <= eps:
            clusters[-1].append(t)
        else:
            clusters.append([t])
    rep = []
    for cl in clusters:
        fs = [t for t in cl if t in featset]
        rep.append(fs[0] if fs else cl[0])
    filled = [rep[0]]
    for a, b in zip(rep, rep[1:]):
        gap = b - a
        if gap > 1.3 * hl:
            n = int(math.ceil(gap / hl))
            filled.extend(a + gap * k / n for k in range(1, n))
        filled.append(b)
    return np.array(filled)


GRADING = 2.0  # trace subsegment length near a crossing ~ GRADING * wedge width


def _shell_radii(h, theta, tol):
    """Radius ladder around a crossing at angle ``theta``.

    Radii are matched across every ray through the point (same ladder),
    which keeps shared subsegments out of each other's diametral disks.
    The ladder is geometric with ratio ``1 + 2 * GRADING * sin(theta/2)``,
    so subsegments scale with the local wedge width and the wedge fills
    with sound triangles instead of slivers; it starts near ``h * theta``
    and ends where the rays are about ``h`` apart.
    """
    theta = max(theta, 1e-6)
    r_min = max(h * theta / math.pi, 100.0 * tol)
    r_max = 0.5 * h / math.tan(0.5 * theta) if theta < 1.5 else 0.5 * h
    ratio = min(2.0, 1.0 + 2.0 * GRADING * math.sin(0.5 * theta))
    return r_min, max(r_max, 0.5 * h), ratio


def global_trace_partitions(net, target_h, h_overrides=None, crossings=None):
    """Shared per-trace partitions for matching-class meshes."""
    if crossings is None:
        crossings = _trace_crossing_points(net)
    parts = {}
    for tr in net.traces:
        h = _trace_h(net, tr, target_h, h_overrides)
        feats, shells = [], {}
        for rec in crossings:
            if tr.id not in rec["params"]:
                continue
            tc = rec["params"][tr.id]
            feats.append(tc)
            shells[tc] = _shell_radii(h, rec["angle"], net.tol_geom)
        eps = net.tol_len / tr.length
        parts[tr.id] = _partition_1d(tr.length, h, feats, shells, eps)
    return parts


def _trace_h(net, tr, target_h, h_overrides):
    if not h_overrides:
        return target_h
    hs = [h_overrides.get(fid, target_h) for fid in (tr.i, tr.j)]
    return min(hs)


class _Required:
    """Required points and subsegments of one fracture.

    Point deduplication runs through a spatial hash (grid of bin size
    ``4 * tol`` with a 3x3 neighborhood check), so chains sharing
    endpoints, crossing points in particular, collapse to one index.
    """

    def __init__(self, tol):
        self.points = []
        self.segs = []      # (ia, ib)
        self.locked = []    # bool per seg
        self._bins = {}
        self._tol = tol
        self._cell = 4.0 * tol

    def add_point(self, p):
        p = np.asarray(p, float)
        bx = int(math.floor(p[0] / self._cell))
        by = int(math.floor(p[1] / self._cell))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for i in self._bins.get((bx + dx, by + dy), ()):
                    q = self.points[i]
                    if abs(q[0] - p[0]) <= self._tol and abs(q[1] - p[1]) <= self._tol:
                        return i
        self.points.append(p)
        idx = len(self.points) - 1
        self._bins.setdefault((bx, by), []).append(idx)
        return idx

    def add_chain(self, pts, locked):
        idx = [self.add_point(p) for p in pts]
        for a, b in zip(idx, idx[1:]):
            if a != b:
                self.segs.append((a, b))
                self.locked.append(locked)


def _fracture_required(net, fid, conformity, h, global_parts, crossings):
    """Required features of one fracture in frame coordinates."""
    frac = net.fracture(fid)
    req = _Required(net.tol_geom)

    # trace chains
    for tr in net.traces_of(fid):
        if conformity == "nonmatching" and fid not in tr.on_boundary:
            continue
        q = tr.endpoints_local(frac)
        if conformity == "matching":
            params = global_parts[tr.id]
            locked = True
        else:
            # deliberately different target sizes per parent so the two
            # partitions of a trace genuinely differ on conforming meshes
            h_f = h * (0.75 if fid % 2 == 0 else 1.0)
            feats, shells = [], {}
            local_ids = {t.id for t in net.traces_of(fid)}
            for rec in crossings:
                if tr.id not in rec["params"]:
                    continue
                if len(set(rec["params"]) & local_ids) < 2:
                    continue  # crossing not visible inside this fracture
                tc = rec["params"][tr.id]
                feats.append(tc)
                shells[tc] = _shell_radii(h_f, rec["angle"], net.tol_geom)
            eps = net.tol_len / tr.length
            params = _partition_1d(tr.length, h_f, feats, shells, eps)
            locked = False
        pts = q[0] + params[:, None] * (q[1] - q[0])
        req.add_chain(pts, locked)

    # boundary chains, avoiding stretches covered by boundary traces
    for k in range(frac.nverts):
        v0 = frac.verts2[k]
        v1 = frac.verts2[(k + 1) % frac.nverts]
        L = np.linalg.norm(v1 - v0)
        cuts = {0.0, 1.0}
        for p in net.portions_of(fid):
            if p.edge == k:
                cuts.update(p.span)
        covered = net._trace_spans_on_edge(frac, k)
        for lo, hi, _ in covered:
            cuts.update((lo, hi))
        for tr in net.traces_of(fid):
            # interior-trace endpoints terminating on this edge
            for q in tr.endpoints_local(frac):
                e = v1 - v0
                t = (q - v0) @ e / (L * L)
                dist = abs((q[0] - v0[0]) * e[1] - (q[1] - v0[1]) * e[0]) / L
                if dist <= net.tol_geom and 1e-9 < t < 1 - 1e-9:
                    cuts.add(float(t))
        cuts = sorted(cuts)
        for a, b in zip(cuts, cuts[1:]):
            if b - a < net.tol_len / L:
                continue
            if any(lo - 1e-12 <= a and b <= hi + 1e-12 for lo, hi, _ in covered):
                continue  # the trace chain supplies these edges
            n = max(1, int(math.ceil((b - a) * L / h)))
            ts = a + (b - a) * np.arange(n + 1) / n
            pts = v0 + ts[:, None] * (v1 - v0)
            req.add_chain(pts, False)
    return req


# -- triangulation helpers ----------------------------------------------


def _hex_lattice(poly, h):
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    dy = h * math.sqrt(3.0) / 2.0
    rows = int(math.floor((hi[1] - lo[1]) / dy)) + 1
    pts = []
    for j in range(rows + 1):
        y = lo[1] + j * dy
        x0 = lo[0] + (0.5 * h if j % 2 else 0.0)
        n = int(math.floor((hi[0] - x0) / h)) + 1
        if n > 0:
            xs = x0 + h * np.arange(n)
            pts.append(np.column_stack([xs, np.full(n, y)]))
    return np.vstack(pts) if pts else np.zeros((0, 2))


def _dist_to_segments(pts, pa, pb):
    """Min distance from each point to any of the segments (chunked)."""
    best = np.full(len(pts), np.inf)
    for k in range(len(pa)):
        e = pb[k] - pa[k]
        L2 = e @ e
        if L2 == 0.0:
            d = np.linalg.norm(pts - pa[k], axis=1)
        else:
            t = np.clip((pts - pa[k]) @ e / L2, 0.0, 1.0)
            d = np.linalg.norm(pts - pa[k] - t[:, None] * e, axis=1)
        np.minimum(best, d, out=best)
    return best


def _poly_margin(poly, pts):
    """Signed distance of points into a convex CCW polygon (min over edges)."""
    m = np.full(len(pts), np.inf)
    n = len(poly)
    for k in range(n):
        e = poly[(k + 1) % n] - poly[k]
        L = np.linalg.norm(e)
        d = (e[0] * (pts[:, 1] - poly[k][1]) - e[1] * (pts[:, 0] - poly[k][0])) / L
        np.minimum(m, d, out=m)
    return m


def _circumcircles(pts, tris):
    a = pts[tris[:, 0]]
    b = pts[tris[:, 1]]
    c = pts[tris[:, 2]]
    d = 2.0 * (
        a[:, 0] * (b[:, 1] - c[:, 1])
        + b[:, 0] * (c[:, 1] - a[:, 1])
        + c[:, 0] * (a[:, 1] - b[:, 1])
    )
    d = np.where(np.abs(d) < 1e-300, 1e-300, d)
    a2 = (a * a).sum(1)
    b2 = (b * b).sum(1)
    c2 = (c * c).sum(1)
    ux = (a2 * (b[:, 1] - c[:, 1]) + b2 * (c[:, 1] - a[:, 1]) + c2 * (a[:, 1] - b[:, 1])) / d
    uy = (a2 * (c[:, 0] - b[:, 0]) + b2 * (a[:, 0] - c[:, 0]) + c2 * (b[:, 0] - a[:, 0])) / d
    cc = np.column_stack([ux, uy])
    rr = np.linalg.norm(pts[tris[:, 0]] - cc, axis=1)
    return cc, rr


def _min_angles(pts, tris):
    a = pts[tris[:, 0]]
    b = pts[tris[:, 1]]
    c = pts[tris[:, 2]]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(a - c, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    out = np.full(len(tris), np.pi)
    for (l0, l1, l2) in ((la, lb, lc), (lb, lc, la), (lc, la, lb)):
        cosv = np.clip((l1**2 + l2**2 - l0**2) / (2 * l1 * l2), -1.0, 1.0)
        np.minimum(out, np.arccos(cosv), out=out)
    return out


def _orient(pts, tris):
    a = pts[tris[:, 0]]
    b = pts[tris[:, 1]]
    c = pts[tris[:, 2]]
    s = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = s < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def _in_circle(pts, ia, ib, ic, idx):
    """True when point idx is inside the circumcircle of (ia, ib, ic)."""
    ax, ay = pts[ia] - pts[idx]
    bx, by = pts[ib] - pts[idx]
    cx, cy = pts[ic] - pts[idx]
    det = (
        (ax * ax + ay * ay) * (bx * cy - by * cx)
        - (bx * bx + by * by) * (ax * cy - ay * cx)
        + (cx * cx + cy * cy) * (ax * by - ay * bx)
    )
    # assumes (ia, ib, ic) is CCW
    return det > 0.0


def _pseudo_triangulate(pts, a, b, chain):
    """Delaunay triangulation of the pseudo-polygon a -> chain -> b."""
    if not chain:
        return []
    c = chain[0]
    for d in chain[1:]:
        tri = (a, b, c)
        p0, p1, p2 = pts[a], pts[b], pts[c]
        ccw = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if ccw < 0:
            tri = (a, c, b)
        if _in_circle(pts, *tri, d):
            c = d
    k = chain.index(c)
    out = [(a, b, c)]
    out += _pseudo_triangulate(pts, a, c, chain[:k])
    out += _pseudo_triangulate(pts, c, b, chain[k + 1:])
    return out


def _recover_edge(pts, tris, a, b, tol):
    """Force segment (a, b) to be an edge by retriangulating its cavity.

    Returns a new triangle array or None when the cavity walk fails.
    """
    pa, pb = pts[a], pts[b]
    d = pb - pa
    L = np.linalg.norm(d)
    # vertices lying on the open segment split the recovery
    t = (pts - pa) @ d / (L * L)
    perp = np.abs((pts[:, 0] - pa[0]) * d[1] - (pts[:, 1] - pa[1]) * d[0]) / L
    onseg = np.flatnonzero((perp <= tol) & (t > 1e-9) & (t < 1 - 1e-9))
    onseg = [i for i in onseg if i not in (a, b)]
    if onseg:
        order = np.argsort(t[onseg])
        stops = [a] + [onseg[i] for i in order] + [b]
        cur = tris
        for u, v in zip(stops, stops[1:]):
            cur = _recover_edge(pts, cur, u, v, tol)
            if cur is None:
                return None
        return cur

    # triangles properly crossed by the open segment (vectorized clip of
    # the segment against each triangle's three half-planes)
    has_a = np.any(tris == a, axis=1)
    has_b = np.any(tris == b, axis=1)
    if np.any(has_a & has_b):
        return tris  # already present
    lo = np.zeros(len(tris))
    hi = np.ones(len(tris))
    feas = np.ones(len(tris), dtype=bool)
    for k in range(3):
        p0 = pts[tris[:, k]]
        e = pts[tris[:, (k + 1) % 3]] - p0
        mlen = np.linalg.norm(e, axis=1)
        g = (-e[:, 1] * d[0] + e[:, 0] * d[1]) / mlen
        c = (-e[:, 1] * (pa[0] - p0[:, 0]) + e[:, 0] * (pa[1] - p0[:, 1])) / mlen
        par = np.abs(g) < 1e-14 * L
        feas &= ~(par & (c < -1e-12))
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = np.where(par, 0.0, -c / g)
        lo = np.where(~par & (g > 0), np.maximum(lo, bound), lo)
        hi = np.where(~par & (g < 0), np.minimum(hi, bound), hi)
    crossed = np.flatnonzero(feas & (hi - lo > 1e-9)).tolist()
    if not crossed:
        return None
    cavity = set(crossed)
    directed = {}
    for n in cavity:
        tri = tris[n]
        for k in range(3):
            directed[(int(tri[k]), int(tri[(k + 1) % 3]))] = n
    boundary = {
        (u, v): n for (u, v), n in directed.items() if (v, u) not in directed
    }
    nxt = {u: v for (u, v) in boundary}
    if a not in nxt or len(nxt) != len(boundary):
        return None
    loop = [a]
    while True:
        v = nxt.get(loop[-1])
        if v is None:
            return None
        if v == a:
            break
        loop.append(v)
        if len(loop) > len(boundary) + 1:
            return None
    if b not in loop:
        return None
    kb = loop.index(b)
    left = loop[1:kb]          # loop order between a and b
    right = loop[kb + 1:]      # loop order between b and a
    if not left or not right:
        return None
    # the cavity loop is CCW, so (a, b) with the left chain and (b, a) with
    # the right chain are two simple pseudo-polygons covering the cavity
    new = _pseudo_triangulate(pts, a, b, left)
    new += _pseudo_triangulate(pts, b, a, right)
    keep = [tri for n, tri in enumerate(tris) if n not in cavity]
    out = np.array(keep + [list(t) for t in new], dtype=np.int64)
    return _orient(pts, out)


# -- per-fracture driver -------------------------------------------------


def _seg_arrays(segs, locked):
    if not segs:
        return np.zeros((0, 2), int), np.zeros(0, bool)
    return np.array(segs, dtype=np.int64), np.array(locked, dtype=bool)


def _edge_key_set(tris):
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    return set(map(tuple, e.tolist()))


def _disk_hits(cand, pts, segs, scale=1.0):
    """Per candidate, indices of subsegments whose (scaled) diametral disk
    strictly contains it.  The tree is built on the candidates and queried
    per disk with its own radius, so graded subsegment ladders (radii over
    many decades) stay near-linear."""
    out = [[] for _ in range(len(cand))]
    if len(segs) == 0 or len(cand) == 0:
        return [np.zeros(0, dtype=np.int64)] * len(cand)
    mid = 0.5 * (pts[segs[:, 0]] + pts[segs[:, 1]])
    rad = 0.5 * scale * np.linalg.norm(pts[segs[:, 1]] - pts[segs[:, 0]], axis=1)
    tree = cKDTree(cand)
    groups = tree.query_ball_point(mid, rad)
    for s, g in enumerate(groups):
        if not g:
            continue
        g = np.asarray(g, dtype=np.int64)
        d2 = ((cand[g] - mid[s]) ** 2).sum(axis=1)
        for n in g[d2 < rad[s] ** 2 * (1.0 - 1e-12)]:
            out[n].append(int(s))
    return [np.asarray(g, dtype=np.int64) for g in out]


def _triangulate_polygon(poly, req, h, tol, max_rounds=MAX_ROUNDS):
    """Triangulate one convex polygon honoring required subsegments.

    Returns (points, triangles, quality_violations).
    """
    points = [np.asarray(p, float) for p in req.points]
    segs = list(req.segs)
    locked = list(req.locked)

    latt = _hex_lattice(poly, h)
    if len(latt):
        latt = latt[_poly_margin(poly, latt) >= 0.55 * h]
    if len(latt) and points:
        rp = np.array(points)
        dist, _ = cKDTree(rp).query(latt, k=1)
        latt = latt[dist >= 0.45 * h]
    if len(latt) and segs:
        sa = np.array(segs)
        rp = np.array(points)
        hits = _disk_hits(latt, rp, sa, scale=1.15)
        latt = latt[[len(g) == 0 for g in hits]]
    points.extend(latt)

    violations = 0
    tris = None
    for rnd in range(max_rounds):
        pts = np.array(points)
        if len(pts) < 3:
            raise MeshFailure("fewer than three mesh points")
        dela = Delaunay(pts)
        tris = _orient(pts, dela.simplices.astype(np.int64))
        # drop exactly degenerate slivers from collinear boundary runs
        a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
        area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (
            b[:, 1] - a[:, 1]
        ) * (c[:, 0] - a[:, 0])
        tris = tris[area2 > 1e-14 * h * h]
        present = _edge_key_set(tris)
        missing = [
            (ia, ib) for (ia, ib) in segs
            if ((ia, ib) if ia < ib else (ib, ia)) not in present
        ]
        for (ia, ib) in missing:
            tris = _recover_edge(pts, tris, ia, ib, tol)
            if tris is None:
                raise MeshFailure(
                    f"could not recover required edge ({ia}, {ib})"
                )

        if rnd == max_rounds - 1 or len(points) > MAX_POINTS:
            break

        cc, rr = _circumcircles(pts, tris)
        ang = _min_angles(pts, tris)
        seg_arr, lock_arr = _seg_arrays(segs, locked)
        if len(seg_arr):
            # distance to required points approximates distance to the
            # required segments well where it matters (short subsegments)
            req_pts = np.unique(seg_arr.ravel())
            lfs, _ = cKDTree(pts[req_pts]).query(cc, k=1)
        else:
            lfs = np.full(len(tris), np.inf)
        bad = (ang < np.deg2rad(MIN_ANGLE_DEG)) | (rr > SIZE_FACTOR * h)
        bad &= rr > np.maximum(LFS_FACTOR * lfs, h / 2048.0)
        cand_idx = np.flatnonzero(bad)
        if len(cand_idx) == 0:
            break
        order = np.lexsort((cc[cand_idx, 0], cc[cand_idx, 1]))
        cand_idx = cand_idx[order]
        cand = cc[cand_idx]
        cand_r = rr[cand_idx]
        margin = _poly_margin(poly, cand)
        enc = _disk_hits(cand, pts, seg_arr)

        tree = cKDTree(pts)
        near_exist, _ = tree.query(cand, k=1)
        space_arr = 0.3 * np.minimum(cand_r, h)
        to_split = set()
        # circumcenters inside some diametral disk split the splittable
        # subsegments they encroach; purely locked encroachments inside
        # the polygon are recorded as quality violations
        hit_any = np.array([len(g) > 0 for g in enc], dtype=bool)
        for n in np.flatnonzero(hit_any):
            soft = [int(s) for s in enc[n] if not lock_arr[s]]
            if soft:
                to_split.update(soft)
            elif margin[n] > tol:
                violations += 1
        keep = ~hit_any & (margin > tol) & (near_exist >= space_arr)
        accepted = []
        acc_bins = {}
        acell = 0.3 * h  # grid cell >= the largest possible spacing radius
        cx = cand[:, 0].tolist()
        cy = cand[:, 1].tolist()
        sp = space_arr.tolist()
        for n in np.flatnonzero(keep).tolist():
            x, y, space = cx[n], cy[n], sp[n]
            bx = int(math.floor(x / acell))
            by = int(math.floor(y / acell))
            ok = True
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for qi in acc_bins.get((bx + dx, by + dy), ()):
                        q = accepted[qi]
                        if (q[0] - x) ** 2 + (q[1] - y) ** 2 < space * space:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                acc_bins.setdefault((bx, by), []).append(len(accepted))
                accepted.append((x, y))

        new_pts = [np.array(p) for p in accepted]
        if to_split:
            for s in sorted(to_split, reverse=True):
                ia, ib = segs[s]
                mp = 0.5 * (pts[ia] + pts[ib])
                idx = len(points) + len(new_pts)
                new_pts.append(mp)
                lk = locked[s]
                segs[s] = (ia, idx)
                segs.append((idx, ib))
                locked.append(lk)
        if not new_pts:
            break
        points.extend(np.asarray(p, float) for p in new_pts)

    return np.array(points), tris, violations


def _jitter_points(pts, tris, locked, h, rng, amplitude):
    """Distort unlocked vertices without inverting triangles.

    Strongly regular lattices make centroid-based two-point stencils
    accidentally consistent (centroids approach circumcenters), which
    hides the behavior such schemes show on generic unstructured grids.
    Smooth large-scale warps do not help: their displacement gradient
    vanishes under refinement, restoring consistency.  Instead lattice
    rows shear in alternating directions at the mesh pitch, so the
    skew between centroid axis and edge normal is the same at every
    refinement level; white noise on top breaks the remaining local
    symmetries.  Each accepted displacement keeps every incident
    triangle above 30% of its previous area.
    """
    incident = [[] for _ in range(len(pts))]
    for t, tri in enumerate(tris):
        for v in tri:
            incident[int(v)].append(t)
    out = pts.copy()
    # herringbone: lattice rows shear in alternating directions, so the
    # skew survives refinement instead of averaging out
    pitch = h * math.sqrt(3.0) / 2.0
    phase = rng.uniform(0.0, 1.0)
    noise = 0.35

    def areas(tlist):
        a = np.empty(len(tlist))
        for k, t in enumerate(tlist):
            i, j, m = tris[t]
            u, w = out[j] - out[i], out[m] - out[i]
            a[k] = 0.5 * (u[0] * w[1] - u[1] * w[0])
        return a

    for v in np.flatnonzero(~locked):
        row = int(math.floor(out[v][1] / pitch + phase))
        d = np.array([0.8 if row % 2 == 0 else -0.8, 0.0])
        d += noise * rng.uniform(-1.0, 1.0, size=2)
        old = out[v].copy()
        before = areas(incident[v])
        out[v] = old + amplitude * h * d
        after = areas(incident[v])
        if np.any(after < 0.3 * before):
            out[v] = old
    return out


def triangulate_network(net, target_h, conformity="matching",
                        h_overrides=None, max_rounds=MAX_ROUNDS,
                        jitter=0.0, seed=0):
    """Mesh every fracture of a network.

    Parameters
    ----------
    net : FractureNetwork
    target_h : float
        Target edge length.  ``h_overrides`` maps fracture ids to
        per-fracture sizes (traces use the finer of their parents').
    conformity : {"matching", "conforming", "nonmatching"}
    jitter : float
        Relative amplitude of a deterministic random displacement of
        interior vertices (0 disables).  Vertices on boundaries and
        required trace segments never move.

    Returns a validated NetworkMesh.
    """
    crossings = _trace_crossing_points(net)
    parts = None
    if conformity == "matching":
        parts = global_trace_partitions(net, target_h, h_overrides, crossings)
    fmeshes = []
    violations = 0
    for f in net.fractures:
        h = (h_overrides or {}).get(f.id, target_h)
        req = _fracture_required(net, f.id, conformity, h, parts, crossings)
        pts, tris, viol = _triangulate_polygon(
            f.verts2, req, h, net.tol_geom, max_rounds
        )
        violations += viol
        if jitter > 0.0:
            rpts = np.asarray(req.points)
            pa = [rpts[a] for a, _ in req.segs]
            pb = [rpts[b] for _, b in req.segs]
            for k in range(f.nverts):
                pa.append(f.verts2[k])
                pb.append(f.verts2[(k + 1) % f.nverts])
            d = _dist_to_segments(pts, np.asarray(pa), np.asarray(pb))
            locked = d < 10.0 * net.tol_geom
            rng = np.random.default_rng([seed, f.id])
            pts = _jitter_points(pts, tris, locked, h, rng, jitter)
        fmeshes.append(build_fracture_mesh(net, f.id, pts, tris, conformity))
    mesh = NetworkMesh(net, fmeshes, conformity, violations)
    mesh.validate()
    return mesh
