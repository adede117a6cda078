"""Lowest-order mixed virtual elements on polygonal network meshes.

Unknowns are one normal-flux degree of freedom per edge record (trace
records are per side, so the two sides of a trace carry independent
fluxes), cell-constant heads, and one Lagrange multiplier per trace
interval.  The multiplier approximates the trace head; its constraint row
balances the fluxes all incident sides push into the interval.

The local matrix of each cell is the usual consistency-plus-stabilization
splitting: the projection onto constant velocities reproduces
``K^-1``-energies of constants exactly and a scaled identity acts on the
projection's kernel.  Flat vertices left over from conformity restoration
or agglomeration are harmless, so the same assembly runs on triangles,
cut polygons, and agglomerated cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import FloatingFracture, MeshFailure, NonSpdLocal
from .linalg import solve_saddle
from .meshing import EDGE_BOUNDARY, EDGE_INTERIOR
from .quadrature import polygon_rule, segment_rule
from .solution import Solution


@dataclass
class MvemSystem:
    """Assembled saddle blocks before boundary elimination."""

    mesh: object
    M: sp.csr_matrix
    G: sp.csr_matrix
    C: sp.csr_matrix
    r: np.ndarray
    F: np.ndarray
    fixed: np.ndarray
    fixed_val: np.ndarray
    edof_off: np.ndarray
    cell_off: np.ndarray
    mult_index: dict


def _edge_normals(fm):
    """Unit normal per edge record: interior cell0 -> cell1, else outward."""
    pa = fm.points[fm.edge_verts[:, 0]]
    pb = fm.points[fm.edge_verts[:, 1]]
    t = pb - pa
    n0 = np.column_stack([t[:, 1], -t[:, 0]]) / fm.edge_length[:, None]
    c0 = fm.cell_centroid[fm.edge_cells[:, 0]]
    ref = np.where(
        (fm.edge_cells[:, 1] >= 0)[:, None],
        fm.cell_centroid[np.maximum(fm.edge_cells[:, 1], 0)] - c0,
        fm.edge_midpoint - c0,
    )
    sgn = np.sign(np.einsum("ei,ei->e", n0, ref))
    return n0 * sgn[:, None]


def _cell_edge_table(fm):
    """Per cell: list of (edge record, outward sign)."""
    table = [[] for _ in range(fm.ncells)]
    for e in range(fm.nedges):
        c0 = int(fm.edge_cells[e, 0])
        table[c0].append((e, 1.0))
        c1 = int(fm.edge_cells[e, 1])
        if c1 >= 0:
            table[c1].append((e, -1.0))
    return table


def _local_matrix(fm, nhat, c, ce):
    """Consistency + stabilization matrix of one cell over its dofs."""
    K = fm.fracture.permeability
    Kinv = np.linalg.inv(K)
    area = fm.cell_area[c]
    k = len(ce)
    edges = np.array([e for e, _ in ce])
    s = np.array([sg for _, sg in ce])
    P = (
        s[None, :]
        * (fm.edge_midpoint[edges] - fm.cell_centroid[c]).T
        / area
    )                                                   # (2, k)
    D = fm.edge_length[edges, None] * nhat[edges]       # (k, 2)
    Mc = area * P.T @ Kinv @ P
    tau = np.trace(Mc) / k
    Q = np.eye(k) - D @ P
    Me = Mc + tau * (Q.T @ Q)
    try:
        np.linalg.cholesky(Me)
    except np.linalg.LinAlgError:
        raise NonSpdLocal(
            f"fracture {fm.fracture.id}: local matrix of cell {c} is not "
            "positive definite"
        ) from None
    return Me, edges


def _check_floating_cells(nm, gpairs, has_dir, ncell_total):
    if not gpairs:
        rows = cols = []
    else:
        arr = np.array(gpairs, dtype=np.int64)
        rows, cols = arr[:, 0], arr[:, 1]
    Gr = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(ncell_total, ncell_total)
    )
    ncomp, labels = connected_components(Gr, directed=False)
    bad = set(range(ncomp)) - set(labels[has_dir].tolist())
    if not bad:
        return
    off = np.concatenate(
        [[0], np.cumsum([fm.ncells for fm in nm.fracture_meshes])]
    )
    fids = set()
    for c in np.flatnonzero(np.isin(labels, list(bad))):
        fids.add(int(np.searchsorted(off, c, side="right")))
    raise FloatingFracture(
        f"fractures {sorted(fids)} have no path to a Dirichlet boundary"
    )


def assemble_mvem0(nm, source=None):
    """Build the mixed saddle system on a matching mesh."""
    if nm.conformity != "matching":
        raise MeshFailure(
            "mixed virtual elements require a matching mesh "
            "(cut and restore non-matching grids first)"
        )
    net = nm.network
    nfrac = len(nm.fracture_meshes)
    edof_off = np.concatenate(
        [[0], np.cumsum([fm.nedges for fm in nm.fracture_meshes])]
    ).astype(np.int64)
    cell_off = np.concatenate(
        [[0], np.cumsum([fm.ncells for fm in nm.fracture_meshes])]
    ).astype(np.int64)
    ndof = edof_off[-1]
    ncell = cell_off[-1]

    mr, mc, mv = [], [], []
    gr, gc, gv = [], [], []
    r = np.zeros(ndof)
    F = np.zeros(ncell)
    fixed = np.zeros(ndof, dtype=bool)
    fixed_val = np.zeros(ndof)
    has_dir = np.zeros(ncell, dtype=bool)
    gpairs = []

    for f in range(nfrac):
        fm = nm.fracture_meshes[f]
        nhat = _edge_normals(fm)
        table = _cell_edge_table(fm)
        eo, co = edof_off[f], cell_off[f]
        for c, ce in enumerate(table):
            Me, edges = _local_matrix(fm, nhat, c, ce)
            ge = eo + edges
            mr.append(np.repeat(ge, len(ge)))
            mc.append(np.tile(ge, len(ge)))
            mv.append(Me.ravel())
            for e, sg in ce:
                gr.append(co + c)
                gc.append(eo + e)
                gv.append(sg)
            if source is not None:
                pts, w = polygon_rule(fm.points[fm.cells[c]])
                F[co + c] = w @ source(
                    fm.fracture.id, fm.fracture.to_global(pts)
                )
        inter = np.flatnonzero(fm.edge_kind == EDGE_INTERIOR)
        for e in inter:
            gpairs.append(
                (co + fm.edge_cells[e, 0], co + fm.edge_cells[e, 1])
            )
        bsel = np.flatnonzero(fm.edge_kind == EDGE_BOUNDARY)
        for e in bsel:
            p = net.boundary[fm.edge_ref[e]]
            a2 = fm.points[fm.edge_verts[e, 0]]
            b2 = fm.points[fm.edge_verts[e, 1]]
            qp, qw = segment_rule(a2, b2)
            mean = (qw @ p.value_at(fm.fracture.to_global(qp))) / (
                fm.edge_length[e]
            )
            if p.kind == "dirichlet":
                r[eo + e] = -mean
                has_dir[co + fm.edge_cells[e, 0]] = True
            else:
                fixed[eo + e] = True
                fixed_val[eo + e] = mean * fm.edge_length[e]

    # one multiplier and one balance row per trace interval
    cr, cc, cv = [], [], []
    mult_index = {}
    nrow = 0
    for tr in net.traces:
        recs = nm.sides_of(tr.id)
        nint = recs[0].nintervals
        mult_index[tr.id] = (nrow, nrow + nint)
        for m in range(nint):
            for rec in recs:
                e = int(rec.edges[m])
                cr.append(nrow + m)
                cc.append(edof_off[rec.fracture - 1] + e)
                cv.append(1.0)
                gpairs.append(
                    (
                        cell_off[recs[0].fracture - 1] + int(recs[0].cells[m]),
                        cell_off[rec.fracture - 1] + int(rec.cells[m]),
                    )
                )
        nrow += nint
    _check_floating_cells(nm, gpairs, has_dir, ncell)

    M = sp.coo_matrix(
        (np.concatenate(mv), (np.concatenate(mr), np.concatenate(mc))),
        shape=(ndof, ndof),
    ).tocsr()
    G = sp.coo_matrix((gv, (gr, gc)), shape=(ncell, ndof)).tocsr()
    C = sp.coo_matrix((cv, (cr, cc)), shape=(nrow, ndof)).tocsr()
    return MvemSystem(
        nm, M, G, C, r, F, fixed, fixed_val, edof_off, cell_off, mult_index
    )


def solve_mvem0(nm, source=None, tol=1e-10):
    """Solve the mixed system; heads, fluxes and trace multipliers."""
    system = assemble_mvem0(nm, source)
    free = np.flatnonzero(~system.fixed)
    ux = system.fixed_val
    Mff = system.M[free][:, free]
    f = system.r[free] - (system.M[:, system.fixed] @ ux[system.fixed])[free]
    Gf = system.G[:, free]
    Cf = system.C[:, free]
    g1 = -(system.F - system.G[:, system.fixed] @ ux[system.fixed])
    g2 = -(system.C[:, system.fixed] @ ux[system.fixed])
    B = sp.vstack([-Gf, Cf]).tocsr()
    uf, y, info = solve_saddle(Mff, B, f, np.concatenate([g1, g2]), tol=tol)

    u = ux.copy()
    u[free] = uf
    ncell = system.cell_off[-1]
    h = y[:ncell]
    lam = y[ncell:]

    cell_head = [
        h[system.cell_off[k]:system.cell_off[k + 1]]
        for k in range(len(nm.fracture_meshes))
    ]
    edge_flux = []
    velocity = []
    for k, fm in enumerate(nm.fracture_meshes):
        ue = u[system.edof_off[k]:system.edof_off[k + 1]]
        fl = np.zeros((fm.nedges, 2))
        fl[:, 0] = ue
        inter = fm.edge_kind == EDGE_INTERIOR
        fl[inter, 1] = -ue[inter]
        edge_flux.append(fl)
        vel = np.zeros((fm.ncells, 2))
        for c, ce in enumerate(_cell_edge_table(fm)):
            for e, sg in ce:
                vel[c] += (
                    sg * ue[e]
                    * (fm.edge_midpoint[e] - fm.cell_centroid[c])
                )
            vel[c] /= fm.cell_area[c]
        velocity.append(vel)
    mult = {
        tid: lam[a:b] for tid, (a, b) in system.mult_index.items()
    }
    return Solution(
        mesh=nm,
        method="mvem0",
        cell_head=cell_head,
        edge_flux=edge_flux,
        cell_velocity=velocity,
        multipliers=mult,
        info=info,
        extras={"system": system, "flux_dofs": u, "lam": lam},
    )
