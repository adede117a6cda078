"""Sparse matrices and the two solver entry points.

``solve_spd`` is the workhorse for the symmetric positive definite systems
the discretizations produce: dense Cholesky below a size cutoff, otherwise
Jacobi-preconditioned conjugate gradients with explicit negative-curvature
detection.  ``solve_saddle`` handles the constrained systems (mortar,
mixed VEM) by conjugate gradients on the Schur complement of the
multiplier block, with the leading block factorized once and reused.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotConverged, NotSpd, SingularSchur

DENSE_CUTOFF = 2000


class CsrMatrix:
    """Thin CSR wrapper fixing the interface the rest of the package uses."""

    def __init__(self, mat):
        self._m = sp.csr_matrix(mat)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        """Build from triplets; duplicate entries are summed."""
        m = sp.coo_matrix(
            (np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        )
        return cls(m.tocsr())

    @property
    def shape(self):
        return self._m.shape

    @property
    def nnz(self):
        return self._m.nnz

    def matvec(self, x):
        return self._m @ np.asarray(x, float)

    def __matmul__(self, x):
        if isinstance(x, CsrMatrix):
            return CsrMatrix(self._m @ x._m)
        return self.matvec(x)

    def to_dense(self):
        return self._m.toarray()

    def transpose(self):
        return CsrMatrix(self._m.T.tocsr())

    @property
    def T(self):
        return self.transpose()

    def diagonal(self):
        return self._m.diagonal()

    def scipy(self):
        return self._m

    def __repr__(self):
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"


def _as_sparse(A):
    if isinstance(A, CsrMatrix):
        return A.scipy()
    return sp.csr_matrix(A)


@dataclass
class SolveInfo:
    """Bookkeeping returned next to every solution vector."""

    method: str
    iterations: int = 0
    residual: float = 0.0
    inner_iterations: int = 0
    augmented: bool = False

    def merge_inner(self, other):
        self.inner_iterations += other.iterations


def _pcg(apply_A, b, inv_diag, tol, maxiter):
    """Jacobi-preconditioned CG; returns (x, iterations, residual).

    Raises NotSpd on negative curvature, NotConverged when the budget
    runs out.  Convergence is relative to ||b||.
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for k in range(maxiter):
        Ap = apply_A(p)
        pAp = p @ Ap
        if pAp <= 0.0:
            raise NotSpd(
                f"negative curvature p'Ap = {pAp:.3e} in CG iteration {k}"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            return x, k + 1, rnorm / bnorm
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NotConverged(
        f"CG did not reach tol {tol:.1e} in {maxiter} iterations "
        f"(residual {rnorm / bnorm:.3e})",
        iterations=maxiter,
        residual=rnorm / bnorm,
    )


def solve_spd(A, b, tol=1e-10, maxiter=None, dense_cutoff=DENSE_CUTOFF):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Below ``dense_cutoff`` unknowns a dense Cholesky factorization is
    used; above it Jacobi-preconditioned CG.  Either route raises
    ``NotSpd`` when the matrix is not positive definite.

    Returns
    -------
    x : ndarray
    info : SolveInfo
    """
    Asp = _as_sparse(A)
    b = np.asarray(b, float)
    n = Asp.shape[0]
    if n == 0:
        return np.zeros(0), SolveInfo("empty")
    if n < dense_cutoff:
        try:
            c = sla.cho_factor(Asp.toarray(), check_finite=False)
        except sla.LinAlgError as exc:
            raise NotSpd(f"dense Cholesky failed: {exc}") from exc
        x = sla.cho_solve(c, b, check_finite=False)
        res = np.linalg.norm(Asp @ x - b) / max(np.linalg.norm(b), 1e-300)
        return x, SolveInfo("cholesky", iterations=1, residual=res)
    diag = Asp.diagonal()
    if np.any(diag <= 0.0):
        raise NotSpd("non-positive diagonal entry")
    inv_diag = 1.0 / diag
    if maxiter is None:
        maxiter = 20 * n
    x, it, res = _pcg(lambda v: Asp @ v, b, inv_diag, tol, maxiter)
    return x, SolveInfo("jacobi-cg", iterations=it, residual=res)


def solve_general(A, b):
    """Solve ``A x = b`` for a general square sparse matrix by sparse LU.

    Used for the multi-point flux matrices, which are not symmetric on
    general triangulations.  Raises ``SingularSchur`` when the
    factorization detects a (numerically) singular matrix.
    """
    Asp = _as_sparse(A).tocsc()
    b = np.asarray(b, float)
    if Asp.shape[0] == 0:
        return np.zeros(0), SolveInfo("empty")
    try:
        lu = spla.splu(Asp)
    except RuntimeError as exc:
        raise SingularSchur(f"sparse LU failed: {exc}") from exc
    du = np.abs(lu.U.diagonal())
    if du.min() <= 1e-14 * du.max():
        raise SingularSchur(
            f"matrix is numerically singular (pivot ratio {du.min() / du.max():.3e})"
        )
    x = lu.solve(b)
    res = np.linalg.norm(Asp @ x - b) / max(np.linalg.norm(b), 1e-300)
    return x, SolveInfo("splu", iterations=1, residual=res)


class _SpdOperator:
    """Factorized apply of an SPD block, reused across many solves."""

    def __init__(self, Asp, dense_cutoff=DENSE_CUTOFF):
        n = Asp.shape[0]
        self.n = n
        self.applications = 0
        if n < dense_cutoff:
            self._cho = sla.cho_factor(Asp.toarray(), check_finite=False)
            self._lu = None
        else:
            self._cho = None
            lu = spla.splu(Asp.tocsc())
            du = np.abs(lu.U.diagonal())
            if du.min() <= 1e-12 * du.max():
                raise sla.LinAlgError("numerically singular LU")
            self._lu = lu

    def solve(self, b):
        self.applications += 1
        if self._cho is not None:
            return sla.cho_solve(self._cho, b, check_finite=False)
        return self._lu.solve(b)


def solve_saddle(A, B, f, g, tol=1e-10, maxiter=None, dense_cutoff=DENSE_CUTOFF):
    """Solve the saddle system ``[[A, B'], [B, 0]] [x, lam] = [f, g]``.

    ``A`` is (block) SPD or positive semidefinite; ``B`` has full row
    rank.  Conjugate gradients run on the multiplier Schur complement
    ``B A^-1 B'`` with ``A`` factorized once.  Semidefinite ``A`` (pure
    Neumann blocks pinned only through the constraints) is handled by an
    augmented-Lagrangian shift ``A + gamma B'B``, which leaves the
    solution unchanged.

    Returns
    -------
    x, lam : ndarray
    info : SolveInfo
    """
    Asp = _as_sparse(A).tocsr()
    Bsp = _as_sparse(B).tocsr()
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    n = Asp.shape[0]
    m = Bsp.shape[0]
    if m == 0:
        x, info = solve_spd(Asp, f, tol=tol, dense_cutoff=dense_cutoff)
        return x, np.zeros(0), info

    row_norms = np.sqrt(np.asarray(Bsp.multiply(Bsp).sum(axis=1)).ravel())
    if np.any(row_norms == 0.0):
        raise SingularSchur("constraint matrix has an all-zero row")

    augmented = False
    fa = f
    try:
        op = _SpdOperator(Asp, dense_cutoff)
    except (sla.LinAlgError, RuntimeError):
        diag = Asp.diagonal()
        gamma = float(np.mean(np.abs(diag))) or 1.0
        Aaug = (Asp + gamma * (Bsp.T @ Bsp)).tocsr()
        fa = f + gamma * (Bsp.T @ g)
        try:
            op = _SpdOperator(Aaug, dense_cutoff)
        except (sla.LinAlgError, RuntimeError) as exc:
            raise SingularSchur(
                f"leading block is singular even after augmentation: {exc}"
            ) from exc
        augmented = True

    Ainv_f = op.solve(fa)
    rhs = Bsp @ Ainv_f - g

    def apply_S(lam):
        return Bsp @ op.solve(Bsp.T @ lam)

    if maxiter is None:
        maxiter = max(20 * m, 200)
    # diagonal of S is not available; precondition with row norms of B
    inv_diag = 1.0 / np.maximum(row_norms**2, 1e-300)
    try:
        lam, it, res = _pcg(apply_S, rhs, inv_diag, tol, maxiter)
    except NotSpd as exc:
        raise SingularSchur(f"Schur complement is not positive definite: {exc}") from exc
    x = op.solve(fa - Bsp.T @ lam)

    kkt1 = np.linalg.norm(Asp @ x + Bsp.T @ lam - f)
    kkt2 = np.linalg.norm(Bsp @ x - g)
    scale = max(np.linalg.norm(f), np.linalg.norm(g), 1e-300)
    info = SolveInfo(
        "schur-cg",
        iterations=it,
        residual=max(kkt1, kkt2) / scale,
        inner_iterations=op.applications,
        augmented=augmented,
    )
    return x, lam, info
