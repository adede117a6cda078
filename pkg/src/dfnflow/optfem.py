"""Trace coupling by constrained optimization of independent P1 solves.

Every fracture is discretized and factorized on its own, with the flux it
receives from each trace as an unknown piecewise-constant control on the
fracture's trace partition (for non-matching meshes that is the partition
the trace cuts through the cell interiors).  The controls minimize

    J = 1/2 sum_k ( ||h_i - h_j||^2 + ||U_ik + U_jk||^2 )  on L2(trace k),

whose vanishing recovers head continuity and flux balance.  J is a convex
quadratic of the controls; conjugate gradients run on its normal
equations with the gradient evaluated through adjoint solves, so each
iteration costs one forward and one adjoint backsolve per fracture on
cached factorizations.

Fractures without any Dirichlet boundary are handled with a bordered
(zero-mean) factorization plus one free additive constant per fracture
that joins the control vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FloatingFracture, NotConverged
from .fem import _boundary_data, _p1_blocks
from .linalg import SolveInfo
from .solution import Solution

J_FLOOR = 1e-24


@dataclass
class _Block:
    """One fracture's factorized subproblem."""

    fid: int
    A_full: sp.csr_matrix
    b_base: np.ndarray
    free: np.ndarray
    gvec: np.ndarray          # Dirichlet values on their nodes, else 0
    lu: object
    bordered: bool
    node_portions: dict

    def solve(self, rhs_full, homogeneous):
        """Head from a full-length rhs; Dirichlet data unless homogeneous."""
        g = np.zeros_like(self.gvec) if homogeneous else self.gvec
        base = np.zeros_like(self.b_base) if homogeneous else self.b_base
        r = base + rhs_full - self.A_full @ g
        if self.bordered:
            h = self.lu.solve(np.concatenate([r, [0.0]]))[:-1]
            return h
        h = g.copy()
        h[self.free] = self.lu.solve(r[self.free])
        return h

    def adjoint(self, load_full):
        """Sensitivity transfer: p with A p = load on the free nodes."""
        if self.bordered:
            return self.lu.solve(np.concatenate([load_full, [0.0]]))[:-1]
        p = np.zeros_like(load_full)
        p[self.free] = self.lu.solve(load_full[self.free])
        return p


@dataclass
class _TraceTable:
    """Quadrature and control bookkeeping of one trace."""

    tid: int
    i: int                      # smaller parent id
    j: int
    slice_i: slice              # control slots of side i
    slice_j: slice
    seg_len: np.ndarray         # merged segment lengths (arclength)
    seg_int_i: np.ndarray       # merged segment -> interval of side i
    seg_int_j: np.ndarray
    nodes_i: np.ndarray         # (nseg, 3) cell nodes of side i
    nodes_j: np.ndarray
    phi_i: np.ndarray           # (nseg, 2, 3) basis values at Gauss points
    phi_j: np.ndarray
    w: np.ndarray               # (nseg, 2) Gauss weights
    B_i: sp.csr_matrix          # line-source loads (nodes x intervals)
    B_j: sp.csr_matrix


_G2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def _side_partition(nm, fid, tid):
    """(params, cells) of the fracture's own partition of the trace."""
    rec = nm.sides_of(tid, fid)[0]
    return np.asarray(rec.params, float), np.asarray(rec.cells, np.int64)


def _bary_on_trace(fm, frac, tr, cells, tpar):
    """Cell nodes and barycentric basis values at trace params.

    ``cells[s]`` owns all params ``tpar[s, :]``; returns (nodes, phi).
    """
    q = tr.endpoints_local(frac)
    pts = q[0] + tpar[..., None] * (q[1] - q[0])
    tri = fm.tri
    nodes = tri[cells]
    v = fm.points[nodes]                       # (nseg, 3, 2)
    T = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] * T[:, 1, 0]
    rel = pts - v[:, None, 0, :]
    lam1 = (T[:, None, 1, 1] * rel[..., 0] - T[:, None, 0, 1] * rel[..., 1]) / det[:, None]
    lam2 = (-T[:, None, 1, 0] * rel[..., 0] + T[:, None, 0, 0] * rel[..., 1]) / det[:, None]
    phi = np.stack([1.0 - lam1 - lam2, lam1, lam2], axis=-1)
    return nodes, phi


def _build_trace_table(nm, tr, control_slices):
    net = nm.network
    i, j = min(tr.i, tr.j), max(tr.i, tr.j)
    pi, ci = _side_partition(nm, i, tr.id)
    pj, cj = _side_partition(nm, j, tr.id)
    knots = np.unique(np.concatenate([pi, pj]))
    tolp = net.tol_geom / max(tr.length, net.tol_len)
    keep = [knots[0]]
    for t in knots[1:]:
        if t - keep[-1] > tolp:
            keep.append(t)
    keep[-1] = 1.0
    knots = np.array(keep)
    lo, hi = knots[:-1], knots[1:]
    mid = 0.5 * (lo + hi)
    seg_int_i = np.clip(np.searchsorted(pi, mid) - 1, 0, len(pi) - 2)
    seg_int_j = np.clip(np.searchsorted(pj, mid) - 1, 0, len(pj) - 2)
    L = tr.length
    seg_len = (hi - lo) * L
    gpar = lo[:, None] + _G2[None, :] * (hi - lo)[:, None]
    w = np.repeat(0.5 * seg_len[:, None], 2, axis=1)

    fmi = nm.mesh_of(i)
    fmj = nm.mesh_of(j)
    nodes_i, phi_i = _bary_on_trace(
        fmi, net.fracture(i), tr, ci[seg_int_i], gpar
    )
    nodes_j, phi_j = _bary_on_trace(
        fmj, net.fracture(j), tr, cj[seg_int_j], gpar
    )

    def control_B(fm, nodes, phi, seg_int, nint):
        rows = np.repeat(nodes[:, None, :], 2, axis=1).ravel()
        cols = np.repeat(seg_int, 6)
        vals = (w[:, :, None] * phi).ravel()
        return sp.coo_matrix(
            (vals, (rows, cols)), shape=(len(fm.points), nint)
        ).tocsr()

    B_i = control_B(fmi, nodes_i, phi_i, seg_int_i, len(pi) - 1)
    B_j = control_B(fmj, nodes_j, phi_j, seg_int_j, len(pj) - 1)
    return _TraceTable(
        tr.id, i, j,
        control_slices[(tr.id, i)], control_slices[(tr.id, j)],
        seg_len, seg_int_i, seg_int_j, nodes_i, nodes_j, phi_i, phi_j, w,
        B_i, B_j,
    )


class OptSystem:
    """Factorized per-fracture blocks plus the control machinery."""

    def __init__(self, nm, source=None):
        net = nm.network
        self.mesh = nm
        self.blocks = []
        no_dir = []
        for fm in nm.fracture_meshes:
            rows, cols, vals, load = _p1_blocks(fm, source)
            n = len(fm.points)
            A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
            mask, val, portions = _boundary_data(nm, fm, load)
            free = np.flatnonzero(~mask)
            gvec = np.where(mask, val, 0.0)
            bordered = not mask.any()
            if bordered:
                one = np.ones((n, 1))
                Ab = sp.bmat([[A, one], [one.T, None]]).tocsc()
                lu = spla.splu(Ab)
            else:
                lu = spla.splu(A[free][:, free].tocsc())
            self.blocks.append(
                _Block(fm.fracture.id, A, load, free, gvec, lu, bordered,
                       portions)
            )
            if bordered:
                no_dir.append(fm.fracture.id)

        # isolated pure-Neumann fractures cannot be pinned at all
        with_traces = {t.i for t in net.traces} | {t.j for t in net.traces}
        lonely = [f for f in no_dir if f not in with_traces]
        if lonely:
            raise FloatingFracture(
                f"fractures {lonely} have neither Dirichlet boundary nor "
                "traces"
            )
        self._check_components(net, no_dir)

        # control layout: per (trace, parent) interval blocks, then one
        # free constant per Dirichlet-free fracture
        self.control_slices = {}
        pos = 0
        for tr in net.traces:
            for fid in sorted((tr.i, tr.j)):
                nint = len(_side_partition(nm, fid, tr.id)[0]) - 1
                self.control_slices[(tr.id, fid)] = slice(pos, pos + nint)
                pos += nint
        self.const_index = {}
        for fid in no_dir:
            self.const_index[fid] = pos
            pos += 1
        self.dim = pos
        self.tables = [
            _build_trace_table(nm, tr, self.control_slices)
            for tr in net.traces
        ]

    def _check_components(self, net, no_dir):
        if not no_dir:
            return
        import scipy.sparse.csgraph as csg

        nf = len(net.fractures)
        rows = [t.i - 1 for t in net.traces]
        cols = [t.j - 1 for t in net.traces]
        G = sp.coo_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(nf, nf)
        )
        ncomp, labels = csg.connected_components(G, directed=False)
        has_dir = np.zeros(ncomp, dtype=bool)
        for f in range(nf):
            if f + 1 not in no_dir:
                has_dir[labels[f]] = True
        bad = [
            f + 1 for f in range(nf)
            if not has_dir[labels[f]]
        ]
        if bad:
            raise FloatingFracture(
                f"fractures {sorted(bad)} form a component with no "
                "Dirichlet boundary"
            )

    def precond_diag(self):
        """Diagonal control scaling for the normal-equation CG.

        Interval slots carry the exact flux-balance Hessian diagonal
        (their arclength); free constants carry the trace mass seen by
        the fracture.  Intervals merged away by the knot tolerance get
        a floor so the scaling stays finite; their gradient is zero and
        CG never moves them.
        """
        d = np.zeros(self.dim)
        for t in self.tables:
            np.add.at(d[t.slice_i], t.seg_int_i, t.seg_len)
            np.add.at(d[t.slice_j], t.seg_int_j, t.seg_len)
            for fid in (t.i, t.j):
                if fid in self.const_index:
                    d[self.const_index[fid]] += float(t.w.sum())
        top = d.max() if self.dim else 1.0
        return np.maximum(d, 1e-30 * max(top, 1.0))

    # ----------------------------------------------------------- forward

    def forward(self, U, homogeneous=False):
        """Per-fracture heads for a control vector."""
        rhs = [np.zeros(len(b.gvec)) for b in self.blocks]
        for t in self.tables:
            rhs[t.i - 1] += t.B_i @ U[t.slice_i]
            rhs[t.j - 1] += t.B_j @ U[t.slice_j]
        heads = []
        for blk, r in zip(self.blocks, rhs):
            h = blk.solve(r, homogeneous)
            if blk.fid in self.const_index:
                h = h + U[self.const_index[blk.fid]]
            heads.append(h)
        return heads

    def cost_and_gradient(self, U, homogeneous=False):
        """(J, grad J) by one forward and one adjoint sweep."""
        heads = self.forward(U, homogeneous)
        loads = [np.zeros(len(b.gvec)) for b in self.blocks]
        grad = np.zeros(self.dim)
        J = 0.0
        for t in self.tables:
            hi = heads[t.i - 1]
            hj = heads[t.j - 1]
            vi = np.einsum("sgk,sk->sg", t.phi_i, hi[t.nodes_i])
            vj = np.einsum("sgk,sk->sg", t.phi_j, hj[t.nodes_j])
            mis = vi - vj
            J += np.sum(t.w * mis * mis)
            wm = t.w * mis
            np.add.at(loads[t.i - 1], t.nodes_i,
                      np.einsum("sg,sgk->sk", wm, t.phi_i))
            np.add.at(loads[t.j - 1], t.nodes_j,
                      -np.einsum("sg,sgk->sk", wm, t.phi_j))
            if t.i in self.const_index:
                grad[self.const_index[t.i]] += wm.sum()
            if t.j in self.const_index:
                grad[self.const_index[t.j]] -= wm.sum()
            bal = U[t.slice_i][t.seg_int_i] + U[t.slice_j][t.seg_int_j]
            J += np.sum(t.seg_len * bal * bal)
            gb = t.seg_len * bal
            np.add.at(grad[t.slice_i], t.seg_int_i, gb)
            np.add.at(grad[t.slice_j], t.seg_int_j, gb)
        for k, blk in enumerate(self.blocks):
            p = blk.adjoint(loads[k])
            for t in self.tables:
                if t.i - 1 == k:
                    grad[t.slice_i] += t.B_i.T @ p
                if t.j - 1 == k:
                    grad[t.slice_j] += t.B_j.T @ p
        return 0.5 * J, grad


def minimize(system, tol_grad=1e-8, maxiter=None, log=None):
    """Jacobi-preconditioned CG on the control normal equations.

    Returns (U, iterations, J, gn).  Residuals are kept explicitly and
    each new one is reorthogonalized against all previous ones: the
    Hessian is applied through per-fracture backsolves whose rounding
    destroys conjugacy long before the gradient target, and without
    the cleanup the iteration stalls several decades short.  Memory is
    two extra vectors per iteration, small next to the factorizations.
    The stopping test stays on the plain gradient norm.
    """
    dim = system.dim
    if dim == 0:
        return np.zeros(0), 0, 0.0, 0.0
    if maxiter is None:
        maxiter = 5 * dim
    J0, g0 = system.cost_and_gradient(np.zeros(dim))
    gn0 = np.linalg.norm(g0)
    if log is not None:
        log.append((0, J0, gn0))
    if gn0 == 0.0 or J0 < J_FLOOR:
        return np.zeros(dim), 0, J0, gn0
    diag = system.precond_diag()
    U = np.zeros(dim)
    r = -g0
    z = r / diag
    p = z.copy()
    rz = r @ z
    basis = [(r.copy(), z.copy(), rz)]
    for it in range(1, maxiter + 1):
        Hp = system.cost_and_gradient(p, homogeneous=True)[1]
        pHp = p @ Hp
        if pHp <= 0.0:
            gn = float(np.linalg.norm(r))
            raise NotConverged(
                f"flat curvature direction after {it} iterations "
                f"(|grad| {gn:.3e}, J {J0:.3e})",
                iterations=it, residual=gn,
            )
        a = rz / pHp
        U += a * p
        r -= a * Hp
        for ri, zi, rzi in basis:
            r -= (r @ zi) / rzi * ri
        # quadratic model value, exact in exact arithmetic
        J = J0 + 0.5 * (g0 @ U) - 0.5 * (r @ U)
        gn = float(np.linalg.norm(r))
        if log is not None:
            log.append((it, max(J, 0.0), gn))
        if gn <= tol_grad * gn0 or J < J_FLOOR:
            return U, it, J, gn
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        basis.append((r.copy(), z.copy(), rz))
    raise NotConverged(
        f"gradient norm {gn:.3e} after {maxiter} iterations "
        f"(target {tol_grad * gn0:.3e}, J {J:.3e})",
        iterations=maxiter, residual=gn,
    )


def solve_optfem(nm, source=None, tol_grad=1e-8, maxiter=None,
                 log_path=None):
    """Solve the network by optimization-based trace coupling."""
    system = OptSystem(nm, source)
    log = []
    U, iters, J, gn = minimize(system, tol_grad, maxiter, log)
    heads = system.forward(U)
    Jf, gf = system.cost_and_gradient(U)
    if log_path is not None:
        with open(log_path, "w") as f:
            f.write("iteration,cost,grad_norm\n")
            for it, Jv, g in log:
                f.write(f"{it},{Jv:.16e},{g:.16e}\n")

    # unconstrained residual for boundary flux reporting
    resid = []
    node_portions = {}
    off = 0
    rhs = [np.zeros(len(b.gvec)) for b in system.blocks]
    for t in system.tables:
        rhs[t.i - 1] += t.B_i @ U[t.slice_i]
        rhs[t.j - 1] += t.B_j @ U[t.slice_j]
    for blk, r, h in zip(system.blocks, rhs, heads):
        resid.append(blk.A_full @ h - blk.b_base - r)
        for v, ps in blk.node_portions.items():
            node_portions[off + v] = ps
        off += len(blk.gvec)

    info = SolveInfo("opt-cg", iterations=iters, residual=gn)
    controls = {
        key: U[sl].copy() for key, sl in system.control_slices.items()
    }
    consts = {f: float(U[i]) for f, i in system.const_index.items()}
    return Solution(
        mesh=nm,
        method="opt-fem",
        node_head=heads,
        info=info,
        extras={
            "system": system,
            "cost": float(Jf),
            "grad_norm": float(np.linalg.norm(gf)),
            "controls": controls,
            "free_constants": consts,
            "iterations": log,
            "boundary_residual": np.concatenate(resid),
            "node_portions": node_portions,
        },
    )
