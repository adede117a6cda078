"""Cell-centered finite volumes: two-point and multi-point flux schemes.

Both schemes share the treatment of trace edges.  Every trace interval of
a matching mesh carries an auxiliary junction head connected to each
incident cell (up to four: two sides times two fractures) through the
cell's half transmissibility; the junction head is eliminated locally
(star-delta), which keeps the system cell-centered and, for the two-point
scheme, symmetric positive definite.

The multi-point scheme is the O-variant: around every mesh vertex the
one-sided cell gradients are expressed through edge-midpoint continuity
values, which are eliminated from half-edge flux continuity.  Trace edges
act as zero-flux walls for this local reconstruction, so the vertex
systems never cross a trace; the inter-fracture exchange stays with the
junction stars.  The resulting matrix is not symmetric in general and is
solved directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    FloatingFracture,
    MeshFailure,
    SingularLocal,
    ZeroDistance,
)
from .linalg import CsrMatrix, solve_general, solve_spd
from .meshing import EDGE_BOUNDARY, EDGE_INTERIOR, EDGE_TRACE
from .quadrature import polygon_rule
from .solution import Solution

# wall kinds in vertex interaction regions
_W_DIR = 0
_W_NEU = 1
_W_TRACE = 2


@dataclass
class JunctionGroup:
    """One trace interval with its incident cell sides."""

    trace: int
    interval: int
    gcells: np.ndarray
    edges: list  # (fracture id, edge record) per incident side
    thalf: np.ndarray


@dataclass
class FvSystem:
    """Assembled finite-volume system plus everything flux recovery needs."""

    mesh: object
    A: CsrMatrix
    b: np.ndarray
    offsets: np.ndarray
    source_cell: np.ndarray
    flux_mat: list
    flux_const: list
    groups: list
    has_dirichlet: np.ndarray
    symmetric: bool


def cell_offsets(nm):
    """Global cell index offset of each fracture."""
    sizes = [fm.ncells for fm in nm.fracture_meshes]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def half_transmissibilities(fm):
    """(nedges, 2) two-point half transmissibilities |e| nKn / d.

    Column j refers to ``edge_cells[:, j]``; absent cells get 0.  Raises
    ZeroDistance when a cell centroid falls on the edge line.
    """
    K = fm.fracture.permeability
    pa = fm.points[fm.edge_verts[:, 0]]
    pb = fm.points[fm.edge_verts[:, 1]]
    t = pb - pa
    L = fm.edge_length
    tu = t / L[:, None]
    nvec = np.column_stack([tu[:, 1], -tu[:, 0]])
    nKn = np.einsum("ei,ij,ej->e", nvec, K, nvec)
    T = np.zeros((fm.nedges, 2))
    dmin = 1e-13 * fm.fracture.diameter
    for col in (0, 1):
        cells = fm.edge_cells[:, col]
        mask = cells >= 0
        off = fm.cell_centroid[cells[mask]] - pa[mask]
        d = np.abs(t[mask, 0] * off[:, 1] - t[mask, 1] * off[:, 0]) / L[mask]
        if np.any(d <= dmin):
            e = np.flatnonzero(mask)[np.argmin(d)]
            raise ZeroDistance(
                f"fracture {fm.fracture.id}: centroid of cell "
                f"{fm.edge_cells[e, col]} lies on edge {e}"
            )
        T[mask, col] = L[mask] * nKn[mask] / d
    return T


def boundary_values(nm):
    """Per fracture (dirichlet, neumann) value arrays over edges (NaN off)."""
    out = []
    for fm in nm.fracture_meshes:
        gdir = np.full(fm.nedges, np.nan)
        qneu = np.full(fm.nedges, np.nan)
        sel = np.flatnonzero(fm.edge_kind == EDGE_BOUNDARY)
        for e in sel:
            p = nm.network.boundary[fm.edge_ref[e]]
            val = p.value_at(fm.fracture.to_global(fm.edge_midpoint[e]))
            if p.kind == "dirichlet":
                gdir[e] = val
            else:
                qneu[e] = val
        out.append((gdir, qneu))
    return out


def source_integrals(nm, source):
    """Per-cell integrals of the source density, order-4 quadrature."""
    off = cell_offsets(nm)
    out = np.zeros(off[-1])
    if source is None:
        return out
    for fm in nm.fracture_meshes:
        o = off[fm.fracture.id - 1]
        for c, loop in enumerate(fm.cells):
            pts, w = polygon_rule(fm.points[loop])
            out[o + c] = w @ source(fm.fracture.id, fm.fracture.to_global(pts))
    return out


def junction_groups(nm, thalf):
    """Star groups, one per trace interval of a matching mesh."""
    off = cell_offsets(nm)
    groups = []
    for tr in nm.network.traces:
        recs = nm.sides_of(tr.id)
        if any(r.edges is None for r in recs):
            raise MeshFailure(
                f"trace {tr.id}: finite volumes need edge-resolved traces"
            )
        nint = recs[0].nintervals
        for m in range(nint):
            gcells = []
            edges = []
            tvals = []
            for r in recs:
                fm = nm.mesh_of(r.fracture)
                e = int(r.edges[m])
                gcells.append(off[r.fracture - 1] + int(r.cells[m]))
                edges.append((r.fracture, e))
                tvals.append(thalf[r.fracture - 1][e, 0])
            groups.append(
                JunctionGroup(
                    tr.id, m, np.array(gcells, dtype=np.int64), edges,
                    np.array(tvals),
                )
            )
    return groups


def _star_assemble(groups, rows, cols, vals):
    """Append the eliminated-junction stencils of all star groups."""
    for g in groups:
        T = g.thalf
        tot = T.sum()
        for a in range(len(T)):
            rows.append(g.gcells[a])
            cols.append(g.gcells[a])
            vals.append(T[a] - T[a] ** 2 / tot)
            for b in range(len(T)):
                if b == a:
                    continue
                rows.append(g.gcells[a])
                cols.append(g.gcells[b])
                vals.append(-T[a] * T[b] / tot)


def _check_floating(nm, A, has_dirichlet):
    """Raise FloatingFracture for components with no Dirichlet contact."""
    off = cell_offsets(nm)
    G = A.scipy().copy()
    G.setdiag(0.0)
    G.eliminate_zeros()
    ncomp, labels = connected_components(
        (abs(G) > 0.0).astype(np.int8), directed=False
    )
    bad = set(range(ncomp)) - set(labels[has_dirichlet].tolist())
    if not bad:
        return
    fids = set()
    for c in np.flatnonzero(np.isin(labels, list(bad))):
        fids.add(int(np.searchsorted(off, c, side="right")))
    raise FloatingFracture(
        f"fractures {sorted(fids)} have no path to a Dirichlet boundary"
    )


def assemble_tpfa(nm, source=None):
    """Two-point flux assembly on a matching mesh."""
    if nm.conformity != "matching":
        raise MeshFailure("the two-point scheme requires a matching mesh")
    off = cell_offsets(nm)
    ntot = off[-1]
    thalf = [half_transmissibilities(fm) for fm in nm.fracture_meshes]
    bvals = boundary_values(nm)
    src = source_integrals(nm, source)

    rows, cols, vals = [], [], []
    b = src.copy()
    flux_mat, flux_const = [], []
    has_dir = np.zeros(ntot, dtype=bool)

    for fm, T, (gdir, qneu) in zip(nm.fracture_meshes, thalf, bvals):
        o = off[fm.fracture.id - 1]
        fr, fc, fv = [], [], []
        fconst = np.zeros(fm.nedges)
        for e in range(fm.nedges):
            kind = fm.edge_kind[e]
            c0 = o + fm.edge_cells[e, 0]
            if kind == EDGE_INTERIOR:
                c1 = o + fm.edge_cells[e, 1]
                Te = T[e, 0] * T[e, 1] / (T[e, 0] + T[e, 1])
                rows += [c0, c0, c1, c1]
                cols += [c0, c1, c1, c0]
                vals += [Te, -Te, Te, -Te]
                fr += [e, e]
                fc += [c0, c1]
                fv += [Te, -Te]
            elif kind == EDGE_BOUNDARY:
                if not np.isnan(gdir[e]):
                    Te = T[e, 0]
                    rows.append(c0)
                    cols.append(c0)
                    vals.append(Te)
                    b[c0] += Te * gdir[e]
                    fr.append(e)
                    fc.append(c0)
                    fv.append(Te)
                    fconst[e] = -Te * gdir[e]
                    has_dir[c0] = True
                else:
                    q = qneu[e] * fm.edge_length[e]
                    b[c0] -= q
                    fconst[e] = q
            # trace edges handled by the junction stars
        flux_mat.append(
            sp.coo_matrix((fv, (fr, fc)), shape=(fm.nedges, ntot)).tocsr()
        )
        flux_const.append(fconst)

    groups = junction_groups(nm, thalf)
    _star_assemble(groups, rows, cols, vals)

    A = CsrMatrix.from_coo(rows, cols, vals, (ntot, ntot))
    return FvSystem(
        nm, A, b, off, src, flux_mat, flux_const, groups, has_dir, True
    )


def fv_fluxes(system, heads):
    """Outward fluxes per edge and cell side, plus the junction heads.

    Returns (flux, trace_head): ``flux[f][e, j]`` is the flux leaving
    ``edge_cells[e, j]`` of fracture ``f + 1`` through edge ``e``;
    ``trace_head[tid]`` are the eliminated junction heads per interval.
    """
    heads = np.asarray(heads, float)
    flux = []
    for fm, F, c in zip(system.mesh.fracture_meshes, system.flux_mat,
                        system.flux_const):
        out = np.zeros((fm.nedges, 2))
        out[:, 0] = F @ heads + c
        inter = fm.edge_kind == EDGE_INTERIOR
        out[inter, 1] = -out[inter, 0]
        flux.append(out)
    trace_head = {}
    for g in system.groups:
        h = heads[g.gcells]
        hj = float(g.thalf @ h / g.thalf.sum())
        trace_head.setdefault(g.trace, []).append(hj)
        for (fid, e), T, hc in zip(g.edges, g.thalf, h):
            flux[fid - 1][e, 0] = T * (hc - hj)
    return flux, {t: np.array(v) for t, v in trace_head.items()}


def cell_balance(system, flux):
    """Net outward flux minus source integral, per cell (should vanish)."""
    res = -system.source_cell.copy()
    for fm, fl in zip(system.mesh.fracture_meshes, flux):
        o = system.offsets[fm.fracture.id - 1]
        for col in (0, 1):
            cells = fm.edge_cells[:, col]
            mask = cells >= 0
            np.add.at(res, o + cells[mask], fl[mask, col])
    return res


def _solve_fv(system, tol, label):
    _check_floating(system.mesh, system.A, system.has_dirichlet)
    if system.symmetric:
        h, info = solve_spd(system.A, system.b, tol=tol)
    else:
        h, info = solve_general(system.A, system.b)
    flux, trace_head = fv_fluxes(system, h)
    off = system.offsets
    cell_head = [
        h[off[k]:off[k + 1]] for k in range(len(system.mesh.fracture_meshes))
    ]
    return Solution(
        mesh=system.mesh,
        method=label,
        cell_head=cell_head,
        edge_flux=flux,
        multipliers=trace_head,
        info=info,
        extras={"system": system},
    )


def solve_tpfa(nm, source=None, tol=1e-10):
    """Solve the network Darcy problem with the two-point scheme."""
    return _solve_fv(assemble_tpfa(nm, source), tol, "tpfa")


def solve_mpfa(nm, source=None, tol=1e-10):
    """Solve the network Darcy problem with the multi-point O-scheme."""
    return _solve_fv(assemble_mpfa(nm, source), tol, "mpfa")


# ----------------------------------------------------------------- MPFA


def _vertex_regions(fm):
    """Interaction regions: (vertex, closed, cells, edges) per region.

    Open regions list n cells and n + 1 edges with walls at both ends;
    closed ones n cells and n edges with ``edges[i]`` between ``cells[i]``
    and ``cells[(i + 1) % n]``.  Trace edges count as walls, so regions
    never span a trace.
    """
    cedges = {}
    rec_cells = {}
    for e in range(fm.nedges):
        va, vb = int(fm.edge_verts[e, 0]), int(fm.edge_verts[e, 1])
        for col in (0, 1):
            c = int(fm.edge_cells[e, col])
            if c < 0:
                continue
            for v in (va, vb):
                cedges.setdefault((v, c), []).append(e)
                rec_cells.setdefault((v, e), []).append(c)
    byv = {}
    for (v, c) in cedges:
        byv.setdefault(v, set()).add(c)

    regions = []
    for v, cells in sorted(byv.items()):
        unvisited = set(cells)
        while unvisited:
            start = None
            for c in sorted(unvisited):
                for e in cedges[(v, c)]:
                    if len(rec_cells[(v, e)]) == 1:
                        start = (c, e)
                        break
                if start:
                    break
            if start is None:
                c0 = min(unvisited)
                e_back = cedges[(v, c0)][0]
                chain_c, chain_e = [c0], []
                cur, e_in = c0, e_back
                while True:
                    ea, eb = cedges[(v, cur)]
                    e_out = eb if ea == e_in else ea
                    chain_e.append(e_out)
                    if e_out == e_back:
                        break
                    nxt = [x for x in rec_cells[(v, e_out)] if x != cur][0]
                    chain_c.append(nxt)
                    cur, e_in = nxt, e_out
                regions.append((v, True, chain_c, chain_e))
            else:
                c0, e_wall = start
                chain_c, chain_e = [c0], [e_wall]
                cur, e_in = c0, e_wall
                while True:
                    ea, eb = cedges[(v, cur)]
                    e_out = eb if ea == e_in else ea
                    chain_e.append(e_out)
                    if len(rec_cells[(v, e_out)]) == 1:
                        break
                    nxt = [x for x in rec_cells[(v, e_out)] if x != cur][0]
                    chain_c.append(nxt)
                    cur, e_in = nxt, e_out
                regions.append((v, False, chain_c, chain_e))
            unvisited -= set(chain_c)
    return regions


def _wall_kind(fm, gdir, e):
    if fm.edge_kind[e] == EDGE_TRACE:
        return _W_TRACE
    if not np.isnan(gdir[e]):
        return _W_DIR
    return _W_NEU


def _tpfa_region(fm, T, gdir, qneu, o, rows, cols, vals, b, fr, fc, fv,
                 fconst, closed, cellsc, edgesc):
    """Two-point fluxes for one degenerate vertex region.

    Sliver cells can put a centroid almost on the line through its two
    edge midpoints, which makes the one-sided gradient map of the
    multi-point scheme singular.  Such regions fall back to half-edge
    two-point fluxes: locally conservative, and the loss of consistency
    stays confined to the sliver neighborhood.
    """
    n = len(cellsc)
    for s, e in enumerate(edgesc):
        kind = fm.edge_kind[e]
        if kind == EDGE_INTERIOR:
            if closed:
                ca, cb = cellsc[s], cellsc[(s + 1) % n]
            else:
                ca, cb = cellsc[s - 1], cellsc[s]
            Te = 0.5 * T[e, 0] * T[e, 1] / (T[e, 0] + T[e, 1])
            ga, gb = o + ca, o + cb
            rows += [ga, ga, gb, gb]
            cols += [ga, gb, gb, ga]
            vals += [Te, -Te, Te, -Te]
            sgn = 1.0 if fm.edge_cells[e, 0] == ca else -1.0
            fr.append(np.array([e, e]))
            fc.append(np.array([ga, gb]))
            fv.append(np.array([sgn * Te, -sgn * Te]))
        elif kind == EDGE_TRACE:
            pass        # zero flux locally, star junction elsewhere
        else:
            gc = o + (cellsc[0] if s == 0 else cellsc[-1])
            if not np.isnan(gdir[e]):
                Te = 0.5 * T[e, 0]
                rows.append(gc)
                cols.append(gc)
                vals.append(Te)
                b[gc] += Te * gdir[e]
                fr.append(np.array([e]))
                fc.append(np.array([gc]))
                fv.append(np.array([Te]))
                fconst[e] -= Te * gdir[e]
            else:
                q = qneu[e] * 0.5 * fm.edge_length[e]
                b[gc] -= q
                fconst[e] += q


def _mpfa_fracture(fm, T, gdir, qneu, o, rows, cols, vals, b, fr, fc, fv,
                   fconst):
    """Assemble one fracture's vertex regions into the global system.

    Regions are grouped by (closed, size, wall kinds) so that the local
    eliminations run as one batched solve per group.  Regions with a
    near-singular gradient map drop to the two-point fallback.
    """
    K = fm.fracture.permeability
    scale = 1e-10 * fm.fracture.diameter**2

    grouped = {}
    for v, closed, cellsc, edgesc in _vertex_regions(fm):
        if closed:
            key = (True, len(cellsc), -1, -1)
        else:
            key = (
                False, len(cellsc),
                _wall_kind(fm, gdir, edgesc[0]),
                _wall_kind(fm, gdir, edgesc[-1]),
            )
        grouped.setdefault(key, []).append((v, cellsc, edgesc))

    for (closed, n, wk0, wk1), regs in sorted(grouped.items()):
        R = len(regs)
        m = n if closed else n + 1
        vlist = np.array([r[0] for r in regs])
        cells = np.array([r[1] for r in regs])          # (R, n)
        edges = np.array([r[2] for r in regs])          # (R, m)
        cent = fm.cell_centroid[cells]                  # (R, n, 2)
        mid = fm.edge_midpoint[edges]                   # (R, m, 2)
        half = 0.5 * fm.edge_length[edges]              # (R, m)

        # u-slot of each cell's left/right edge
        if closed:
            li = (np.arange(n) - 1) % n
            ri = np.arange(n)
        else:
            li = np.arange(n)
            ri = np.arange(n) + 1

        # one-sided gradient maps G = inv([mid_L - x; mid_R - x])
        dL = mid[:, li, :] - cent                       # (R, n, 2)
        dR = mid[:, ri, :] - cent
        det = dL[..., 0] * dR[..., 1] - dL[..., 1] * dR[..., 0]
        bad = np.abs(det).min(axis=1) <= scale
        if bad.any():
            for r in np.flatnonzero(bad):
                _tpfa_region(fm, T, gdir, qneu, o, rows, cols, vals, b,
                             fr, fc, fv, fconst, closed,
                             regs[r][1], regs[r][2])
            keep = ~bad
            if not keep.any():
                continue
            vlist, cells, edges = vlist[keep], cells[keep], edges[keep]
            cent, mid, half = cent[keep], mid[keep], half[keep]
            dL, dR, det = dL[keep], dR[keep], det[keep]
            R = len(vlist)
        G = np.empty((R, n, 2, 2))
        G[..., 0, 0] = dR[..., 1] / det
        G[..., 0, 1] = -dL[..., 1] / det
        G[..., 1, 0] = -dR[..., 0] / det
        G[..., 1, 1] = dL[..., 0] / det
        KG = np.einsum("ij,rnjk->rnik", K, G)

        def alpha(i, slot):
            """Coefficients of (u_L - h_i, u_R - h_i) in the flux of cell
            slot ``i`` through the edge in u-slot ``slot``."""
            tvec = (
                fm.points[fm.edge_verts[edges[:, slot], 1]]
                - fm.points[fm.edge_verts[edges[:, slot], 0]]
            )
            tlen = np.linalg.norm(tvec, axis=1)
            nv = np.column_stack([tvec[:, 1], -tvec[:, 0]]) / tlen[:, None]
            sgn = np.sign(
                np.einsum("ri,ri->r", nv, mid[:, slot, :] - cent[:, i, :])
            )
            nv = nv * sgn[:, None]
            return -half[:, slot, None] * np.einsum(
                "ri,rik->rk", nv, KG[:, i, :, :]
            )

        aL = [alpha(i, li[i]) for i in range(n)]
        aR = [alpha(i, ri[i]) for i in range(n)]

        M = np.zeros((R, m, m))
        N = np.zeros((R, m, n))
        rvec = np.zeros((R, m))
        ar = np.arange(R)

        def add_flux_row(row, i, a):
            """phi(cell i through one of its edges) added to row ``row``."""
            M[:, row, li[i]] += a[:, 0]
            M[:, row, ri[i]] += a[:, 1]
            N[:, row, i] += a[:, 0] + a[:, 1]

        if closed:
            for j in range(n):
                add_flux_row(j, j, aR[j])
                add_flux_row(j, (j + 1) % n, aL[(j + 1) % n])
        else:
            for j in range(1, n):
                add_flux_row(j, j - 1, aR[j - 1])
                add_flux_row(j, j, aL[j])
            for row, i, a, wk in ((0, 0, aL[0], wk0),
                                  (m - 1, n - 1, aR[n - 1], wk1)):
                slot = li[i] if row == 0 else ri[i]
                if wk == _W_DIR:
                    M[:, row, slot] = 1.0
                    rvec[:, row] = gdir[edges[:, slot]]
                else:
                    add_flux_row(row, i, a)
                    if wk == _W_NEU:
                        rvec[:, row] = qneu[edges[:, slot]] * half[:, slot]

        rhs = np.concatenate([N, rvec[:, :, None]], axis=2)
        try:
            X = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            sing = [
                vlist[r] for r in range(R)
                if np.linalg.matrix_rank(M[r]) < m
            ]
            raise SingularLocal(
                f"fracture {fm.fracture.id}: singular interaction region "
                f"at vertices {sing}"
            ) from None
        S = X[:, :, :n]                                 # (R, m, n)
        s = X[:, :, n]                                  # (R, m)

        gcells = o + cells

        def stencil(i, a):
            """Flux of cell slot i through one edge: (row over cells, const)."""
            row_h = (
                a[:, 0, None] * S[:, li[i], :]
                + a[:, 1, None] * S[:, ri[i], :]
            )
            row_h[:, i] -= a[:, 0] + a[:, 1]
            const = a[:, 0] * s[:, li[i]] + a[:, 1] * s[:, ri[i]]
            return row_h, const

        def emit_cell(target, row_h, const, sign):
            """Add sign * phi to the balance row of cell slot ``target``."""
            rows.append(np.repeat(gcells[:, target], n))
            cols.append(gcells.ravel())
            vals.append(sign * row_h.ravel())
            np.add.at(b, gcells[:, target], -sign * const)

        def emit_flux(slot, side, row_h, const):
            """Add the half-edge flux to the recovery operator, oriented
            out of ``edge_cells[:, 0]``."""
            erec = edges[:, slot]
            own = fm.edge_cells[erec, 0]
            sgn = np.where(own == cells[ar, side], 1.0, -1.0)
            fr.append(np.repeat(erec, n))
            fc.append(gcells.ravel())
            fv.append((row_h * sgn[:, None]).ravel())
            np.add.at(fconst, erec, const * sgn)

        if closed:
            for j in range(n):
                row_h, const = stencil(j, aR[j])
                emit_cell(j, row_h, const, 1.0)
                emit_cell((j + 1) % n, row_h, const, -1.0)
                emit_flux(ri[j], j, row_h, const)
        else:
            for j in range(1, n):
                row_h, const = stencil(j - 1, aR[j - 1])
                emit_cell(j - 1, row_h, const, 1.0)
                emit_cell(j, row_h, const, -1.0)
                emit_flux(ri[j - 1], j - 1, row_h, const)
            for row, i, a, wk in ((0, 0, aL[0], wk0),
                                  (m - 1, n - 1, aR[n - 1], wk1)):
                slot = li[i] if row == 0 else ri[i]
                if wk == _W_DIR:
                    row_h, const = stencil(i, a)
                    emit_cell(i, row_h, const, 1.0)
                    emit_flux(slot, i, row_h, const)
                elif wk == _W_NEU:
                    q = qneu[edges[:, slot]] * half[:, slot]
                    np.add.at(b, gcells[:, i], -q)
                    np.add.at(fconst, edges[:, slot], q)
                # trace walls: zero flux locally, star junction elsewhere


def assemble_mpfa(nm, source=None):
    """Multi-point O-scheme assembly on a matching triangular mesh."""
    if nm.conformity != "matching":
        raise MeshFailure("the multi-point scheme requires a matching mesh")
    off = cell_offsets(nm)
    ntot = off[-1]
    thalf = [half_transmissibilities(fm) for fm in nm.fracture_meshes]
    bvals = boundary_values(nm)
    src = source_integrals(nm, source)

    rows, cols, vals = [], [], []
    b = src.copy()
    flux_mat, flux_const = [], []
    has_dir = np.zeros(ntot, dtype=bool)

    for fm, T, (gdir, qneu) in zip(nm.fracture_meshes, thalf, bvals):
        if fm.tri is None:
            raise MeshFailure(
                "the multi-point scheme requires triangular cells"
            )
        o = off[fm.fracture.id - 1]
        fr, fc, fv = [], [], []
        fconst = np.zeros(fm.nedges)
        _mpfa_fracture(fm, T, gdir, qneu, o, rows, cols, vals, b,
                       fr, fc, fv, fconst)
        sel = np.flatnonzero(~np.isnan(gdir))
        for e in sel:
            has_dir[o + fm.edge_cells[e, 0]] = True
        if fr:
            flux_mat.append(
                sp.coo_matrix(
                    (np.concatenate(fv),
                     (np.concatenate(fr), np.concatenate(fc))),
                    shape=(fm.nedges, ntot),
                ).tocsr()
            )
        else:
            flux_mat.append(sp.csr_matrix((fm.nedges, ntot)))
        flux_const.append(fconst)

    groups = junction_groups(nm, thalf)
    _star_assemble(groups, rows, cols, vals)

    arows = np.concatenate([np.atleast_1d(r) for r in rows])
    acols = np.concatenate([np.atleast_1d(c) for c in cols])
    avals = np.concatenate([np.atleast_1d(v) for v in vals])
    A = CsrMatrix.from_coo(arows, acols, avals, (ntot, ntot))
    return FvSystem(
        nm, A, b, off, src, flux_mat, flux_const, groups, has_dir, False
    )
