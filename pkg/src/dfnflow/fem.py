"""Nodal P1 finite elements with two trace couplings.

``solve_fem`` runs on matching meshes and enforces head continuity
strongly by sharing the trace nodes between the parent fractures.
``solve_fem_mortar`` keeps the per-fracture spaces independent and couples
them weakly: for every trace one parent (the one with the larger id) is
the slave, and piecewise-constant multipliers on the slave's trace
partition enforce equality of the two head averages interval by interval.
The constraint integrals are evaluated exactly on the merged partition,
so the scheme is usable on conforming meshes where the parents subdivide
the trace differently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    EmptyTraceMesh,
    FloatingFracture,
    MeshFailure,
    QuasiUniformityWarning,
)
from .linalg import CsrMatrix, solve_saddle, solve_spd
from .meshing import EDGE_BOUNDARY, EDGE_TRACE
from .quadrature import segment_rule, triangle_rule
from .solution import Solution

QUASI_UNIFORMITY_FACTOR = 4.0


def sigma(fid, trace):
    """Orientation sign of fracture ``fid`` on a trace: -1 for the parent
    with the smaller id, +1 for the other."""
    if fid not in (trace.i, trace.j):
        raise MeshFailure(f"fracture {fid} is not a parent of trace {trace.id}")
    return -1.0 if fid == min(trace.i, trace.j) else 1.0


@dataclass
class FemSystem:
    """Assembled nodal system, kept in unconstrained form for flux recovery."""

    mesh: object
    gids: list
    nglobal: int
    A_full: CsrMatrix
    b_full: np.ndarray
    dir_mask: np.ndarray
    dir_val: np.ndarray
    node_portions: dict
    B_full: object = None
    nmult: int = 0
    mult_traces: dict = None


def _p1_blocks(fm, source):
    """Stiffness triplets and load vector of one fracture, local node ids."""
    tri = fm.tri
    if tri is None:
        raise MeshFailure("nodal elements require triangular cells")
    K = fm.fracture.permeability
    p = fm.points[tri]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] * T[:, 1, 0]
    area = 0.5 * det
    Tinv = np.empty_like(T)
    Tinv[:, 0, 0] = T[:, 1, 1] / det
    Tinv[:, 0, 1] = -T[:, 0, 1] / det
    Tinv[:, 1, 0] = -T[:, 1, 0] / det
    Tinv[:, 1, 1] = T[:, 0, 0] / det
    grads = np.empty((len(tri), 3, 2))
    grads[:, 1, :] = Tinv[:, 0, :]
    grads[:, 2, :] = Tinv[:, 1, :]
    grads[:, 0, :] = -grads[:, 1, :] - grads[:, 2, :]
    KG = np.einsum("ij,cnj->cni", K, grads)
    loc = np.einsum("cni,cmi,c->cnm", grads, KG, area)

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    vals = loc.ravel()

    load = np.zeros(len(fm.points))
    if source is not None:
        for c in range(len(tri)):
            pts, w = triangle_rule(p[c, 0], p[c, 1], p[c, 2])
            f = source(fm.fracture.id, fm.fracture.to_global(pts))
            lam = _bary(p[c], pts)
            np.add.at(load, tri[c], lam.T @ (w * f))
    return rows, cols, vals, load


def _bary(v, pts):
    T = np.array([v[1] - v[0], v[2] - v[0]]).T
    ab = np.linalg.solve(T, (pts - v[0]).T).T
    return np.column_stack([1.0 - ab[:, 0] - ab[:, 1], ab])


def _boundary_data(nm, fm, load):
    """Dirichlet node values and Neumann load contributions, local ids.

    Returns (mask, values, portion sets per Dirichlet node).
    """
    net = nm.network
    npts = len(fm.points)
    mask = np.zeros(npts, dtype=bool)
    val = np.zeros(npts)
    portions = {}
    sel = np.flatnonzero(fm.edge_kind == EDGE_BOUNDARY)
    order = sorted(sel, key=lambda e: fm.edge_ref[e])
    for e in order:
        p = net.boundary[fm.edge_ref[e]]
        va, vb = fm.edge_verts[e]
        if p.kind == "dirichlet":
            for v in (int(va), int(vb)):
                if not mask[v]:
                    mask[v] = True
                    val[v] = p.value_at(fm.fracture.to_global(fm.points[v]))
                portions.setdefault(v, set()).add(int(fm.edge_ref[e]))
        else:
            a2, b2 = fm.points[va], fm.points[vb]
            qp, qw = segment_rule(a2, b2)
            q = p.value_at(fm.fracture.to_global(qp))
            t = np.linalg.norm(qp - a2, axis=1) / np.linalg.norm(b2 - a2)
            load[va] -= np.sum(qw * q * (1.0 - t))
            load[vb] -= np.sum(qw * q * t)
    return mask, val, portions


def _shared_node_ids(nm):
    """Global node numbering with trace nodes shared across fractures."""
    net = nm.network
    tol = net.tol_geom
    gids = []
    reg_xyz = []
    reg_gid = []
    nglob = 0
    for fm in nm.fracture_meshes:
        ids = np.full(len(fm.points), -1, dtype=np.int64)
        tsel = fm.edge_kind == EDGE_TRACE
        tnodes = np.unique(fm.edge_verts[tsel])
        if len(tnodes):
            g3 = fm.fracture.to_global(fm.points[tnodes])
            if reg_xyz:
                tree = cKDTree(np.array(reg_xyz))
                dist, idx = tree.query(g3)
                hit = dist <= tol
                ids[tnodes[hit]] = np.array(reg_gid, dtype=np.int64)[idx[hit]]
        new = np.flatnonzero(ids < 0)
        ids[new] = nglob + np.arange(len(new))
        nglob += len(new)
        if len(tnodes):
            g3 = fm.fracture.to_global(fm.points[tnodes])
            reg_xyz.extend(g3.tolist())
            reg_gid.extend(ids[tnodes].tolist())
        gids.append(ids)
    return gids, nglob


def _independent_node_ids(nm):
    gids = []
    nglob = 0
    for fm in nm.fracture_meshes:
        gids.append(nglob + np.arange(len(fm.points), dtype=np.int64))
        nglob += len(fm.points)
    return gids, nglob


def _assemble_nodal(nm, source, gids, nglob):
    rows, cols, vals = [], [], []
    b = np.zeros(nglob)
    dir_mask = np.zeros(nglob, dtype=bool)
    dir_val = np.zeros(nglob)
    node_portions = {}
    for fm, ids in zip(nm.fracture_meshes, gids):
        r, c, v, load = _p1_blocks(fm, source)
        mask, val, portions = _boundary_data(nm, fm, load)
        rows.append(ids[r])
        cols.append(ids[c])
        vals.append(v)
        np.add.at(b, ids, load)
        lsel = np.flatnonzero(mask)
        fresh = ~dir_mask[ids[lsel]]
        dir_mask[ids[lsel]] = True
        dir_val[ids[lsel[fresh]]] = val[lsel[fresh]]
        for v_, ps in portions.items():
            node_portions.setdefault(int(ids[v_]), set()).update(ps)
    A = CsrMatrix.from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
        (nglob, nglob),
    )
    return A, b, dir_mask, dir_val, node_portions


def _check_floating_nodes(nm, pattern, dir_mask, gids):
    ncomp, labels = connected_components(pattern, directed=False)
    bad = set(range(ncomp)) - set(labels[dir_mask].tolist())
    if not bad:
        return
    fids = set()
    for fm, ids in zip(nm.fracture_meshes, gids):
        if np.any(np.isin(labels[ids], list(bad))):
            fids.add(fm.fracture.id)
    raise FloatingFracture(
        f"fractures {sorted(fids)} have no path to a Dirichlet boundary"
    )


def assemble_fem(nm, source=None):
    """Trace-conforming P1 assembly with shared trace nodes."""
    if nm.conformity != "matching":
        raise MeshFailure("conforming nodal elements require a matching mesh")
    gids, nglob = _shared_node_ids(nm)
    A, b, dir_mask, dir_val, node_portions = _assemble_nodal(
        nm, source, gids, nglob
    )
    return FemSystem(nm, gids, nglob, A, b, dir_mask, dir_val, node_portions)


def _reduce_and_solve(system, tol):
    A = system.A_full.scipy()
    free = np.flatnonzero(~system.dir_mask)
    g = system.dir_val
    rhs = system.b_full - A @ (system.dir_mask * g)
    Aff = A[free][:, free]
    _check_floating_nodes(
        system.mesh, (abs(A) > 0).astype(np.int8), system.dir_mask,
        system.gids,
    )
    hf, info = solve_spd(Aff, rhs[free], tol=tol)
    h = np.where(system.dir_mask, g, 0.0)
    h[free] = hf
    return h, info


def solve_fem(nm, source=None, tol=1e-10):
    """Solve with strong trace coupling; returns nodal heads per fracture."""
    system = assemble_fem(nm, source)
    h, info = _reduce_and_solve(system, tol)
    node_head = [h[ids] for ids in system.gids]
    return Solution(
        mesh=nm,
        method="fem",
        node_head=node_head,
        info=info,
        extras={
            "system": system,
            "head": h,
            "boundary_residual": system.A_full @ h - system.b_full,
            "node_portions": system.node_portions,
        },
    )


def _trace_chain(nm, fid, tid):
    """Ordered (t_lo, t_hi, node_lo, node_hi) along one fracture's trace."""
    fm = nm.mesh_of(fid)
    net = nm.network
    tr = net.trace(tid)
    frac = net.fracture(fid)
    rec = nm.sides_of(tid, fid)[0]
    if rec.edges is None:
        raise MeshFailure(
            f"trace {tid}: mortar coupling needs edge-resolved traces"
        )
    q = tr.endpoints_local(frac)
    d = q[1] - q[0]
    L2 = d @ d
    out = []
    for m in range(rec.nintervals):
        e = int(rec.edges[m])
        va, vb = int(fm.edge_verts[e, 0]), int(fm.edge_verts[e, 1])
        ta = (fm.points[va] - q[0]) @ d / L2
        tb = (fm.points[vb] - q[0]) @ d / L2
        if ta > tb:
            va, vb, ta, tb = vb, va, tb, ta
        out.append((ta, tb, va, vb))
    return sorted(out)


def _mortar_rows(nm, gids):
    """Constraint triplets: one row per slave-side trace interval.

    Row m integrates (sum_i sigma_i h_i) over the m-th slave interval,
    which vanishing enforces equal head averages across the trace.
    """
    net = nm.network
    rows, cols, vals = [], [], []
    mult_traces = {}
    nrow = 0
    for tr in net.traces:
        slave = max(tr.i, tr.j)
        master = min(tr.i, tr.j)
        schain = _trace_chain(nm, slave, tr.id)
        mchain = _trace_chain(nm, master, tr.id)
        if not schain:
            raise EmptyTraceMesh(
                f"trace {tr.id}: no slave intervals for the multiplier space"
            )
        lens = [c[1] - c[0] for c in schain + mchain]
        if max(lens) > QUASI_UNIFORMITY_FACTOR * min(lens):
            warnings.warn(
                f"trace {tr.id}: partition lengths vary by a factor "
                f"{max(lens) / min(lens):.1f}",
                QuasiUniformityWarning,
                stacklevel=3,
            )
        L = tr.length
        sgid = gids[slave - 1]
        mgid = gids[master - 1]
        mult_traces[tr.id] = (nrow, nrow + len(schain))
        for m, (c0, c1, va, vb) in enumerate(schain):
            row = nrow + m
            w = 0.5 * L * (c1 - c0)
            rows += [row, row]
            cols += [int(sgid[va]), int(sgid[vb])]
            vals += [sigma(slave, tr) * w, sigma(slave, tr) * w]
            for sa, sb, na, nb in mchain:
                lo, hi = max(sa, c0), min(sb, c1)
                if hi - lo <= 1e-14:
                    continue
                seg = L * (hi - lo)
                mid = 0.5 * (lo + hi)
                wa = seg * (sb - mid) / (sb - sa)
                wb = seg * (mid - sa) / (sb - sa)
                rows += [row, row]
                cols += [int(mgid[na]), int(mgid[nb])]
                vals += [sigma(master, tr) * wa, sigma(master, tr) * wb]
        nrow += len(schain)
    return rows, cols, vals, nrow, mult_traces


def assemble_fem_mortar(nm, source=None):
    """Mortar-coupled P1 assembly on a matching or conforming mesh."""
    if nm.conformity not in ("matching", "conforming"):
        raise MeshFailure(
            "mortar elements require edge-resolved traces "
            "(matching or conforming mesh)"
        )
    gids, nglob = _independent_node_ids(nm)
    A, b, dir_mask, dir_val, node_portions = _assemble_nodal(
        nm, source, gids, nglob
    )
    rows, cols, vals, nrow, mult_traces = _mortar_rows(nm, gids)
    B = CsrMatrix.from_coo(rows, cols, vals, (nrow, nglob))
    return FemSystem(
        nm, gids, nglob, A, b, dir_mask, dir_val, node_portions,
        B_full=B, nmult=nrow, mult_traces=mult_traces,
    )


def solve_fem_mortar(nm, source=None, tol=1e-10):
    """Solve with multiplier trace coupling; heads stay per fracture."""
    system = assemble_fem_mortar(nm, source)
    A = system.A_full.scipy()
    B = system.B_full.scipy()
    free = np.flatnonzero(~system.dir_mask)
    gvec = system.dir_mask * system.dir_val
    rhs = system.b_full - A @ gvec
    gcon = -(B @ gvec)

    pattern = (abs(A) > 0).astype(np.int8) + (abs(B.T) @ abs(B) > 0).astype(
        np.int8
    )
    _check_floating_nodes(system.mesh, pattern, system.dir_mask, system.gids)

    # constraint rows fully determined by Dirichlet data drop out
    Bred = sp.csr_matrix(B[:, free])
    keep = np.flatnonzero(np.diff(Bred.indptr) > 0)
    hf, lam_k, info = solve_saddle(
        A[free][:, free], Bred[keep], rhs[free], gcon[keep], tol=tol
    )
    lam = np.zeros(system.nmult)
    lam[keep] = lam_k
    h = gvec.copy()
    h[free] = hf
    node_head = [h[ids] for ids in system.gids]
    mult = {
        tid: lam[a:b] for tid, (a, b) in system.mult_traces.items()
    }
    resid = system.A_full @ h - system.b_full + system.B_full.T @ lam
    return Solution(
        mesh=nm,
        method="fem-mortar",
        node_head=node_head,
        multipliers=mult,
        info=info,
        extras={
            "system": system,
            "head": h,
            "lam": lam,
            "boundary_residual": resid,
            "node_portions": system.node_portions,
        },
    )


def fem_boundary_flux(sol, portions=None):
    """Outward flux through Dirichlet portions from the nodal residual.

    Positive values mean Darcy flow out of the network.  The residual of
    the unconstrained system at a Dirichlet node equals the weak boundary
    flux carried by that node's basis function; nodes shared by several
    Dirichlet portions split their residual evenly.  Returns a dict
    portion index -> flux.  Works for every nodal solver that stores
    ``boundary_residual`` and ``node_portions``.
    """
    r = sol.extras["boundary_residual"]
    node_portions = sol.extras["node_portions"]
    if portions is None:
        wanted = sorted({p for ps in node_portions.values() for p in ps})
    else:
        wanted = list(portions)
    out = {p: 0.0 for p in wanted}
    for node, ps in node_portions.items():
        w = 1.0 / len(ps)
        for p in ps:
            if p in out:
                out[p] -= w * r[node]
    return out
