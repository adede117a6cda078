import numpy as np
import pytest
import scipy.sparse as sp

from dfnflow.errors import NotConverged, NotSpd, SingularSchur
from dfnflow.linalg import CsrMatrix, solve_saddle, solve_spd


def random_spd(rng, n, cond=50.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = np.geomspace(1.0, cond, n)
    return Q @ np.diag(lam) @ Q.T


def poisson1d(n):
    main = 2.0 * np.ones(n)
    off = -1.0 * np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


def test_csr_from_coo_sums_duplicates():
    A = CsrMatrix.from_coo([0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0], (2, 2))
    assert A.shape == (2, 2)
    assert np.allclose(A.to_dense(), [[3.0, 0.0], [0.0, 5.0]])
    assert A.nnz == 2


def test_csr_matvec_and_transpose():
    rng = np.random.default_rng(0)
    D = rng.normal(size=(5, 3))
    A = CsrMatrix(sp.csr_matrix(D))
    x = rng.normal(size=3)
    assert np.allclose(A @ x, D @ x)
    assert np.allclose(A.T.to_dense(), D.T)
    assert np.allclose(A.diagonal(), np.diag(D[:3, :3]))


def test_solve_spd_dense_path():
    rng = np.random.default_rng(1)
    A = random_spd(rng, 40)
    b = rng.normal(size=40)
    x, info = solve_spd(sp.csr_matrix(A), b)
    assert info.method == "cholesky"
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-9)


def test_solve_spd_cg_path():
    rng = np.random.default_rng(2)
    A = random_spd(rng, 60)
    b = rng.normal(size=60)
    x, info = solve_spd(sp.csr_matrix(A), b, dense_cutoff=0)
    assert info.method == "jacobi-cg"
    assert info.iterations > 0
    assert np.linalg.norm(A @ x - b) < 1e-7 * np.linalg.norm(b)


def test_solve_spd_poisson_cg_iterations():
    n = 300
    A = poisson1d(n)
    b = np.ones(n)
    x, info = solve_spd(A, b, dense_cutoff=0)
    assert np.linalg.norm(A @ x - b) <= 1e-8
    assert info.iterations <= n  # CG exactness bound, with slack eaten by fp


def test_not_spd_both_paths():
    A = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(NotSpd):
        solve_spd(sp.csr_matrix(A), np.ones(3))
    ind = sp.csr_matrix(np.diag([1.0, 1.0, -3.0]) + 0.1 * np.ones((3, 3)))
    with pytest.raises(NotSpd):
        solve_spd(ind, np.ones(3), dense_cutoff=0)


def test_not_converged_budget():
    A = poisson1d(200)
    with pytest.raises(NotConverged) as err:
        solve_spd(A, np.ones(200), dense_cutoff=0, maxiter=3)
    assert err.value.iterations == 3
    assert err.value.residual > 0


def test_zero_rhs_short_circuits():
    A = poisson1d(50)
    x, info = solve_spd(A, np.zeros(50), dense_cutoff=0)
    assert np.all(x == 0.0)
    assert info.iterations == 0


def test_saddle_against_dense():
    rng = np.random.default_rng(3)
    n, m = 30, 8
    A = random_spd(rng, n)
    B = rng.normal(size=(m, n))
    f = rng.normal(size=n)
    g = rng.normal(size=m)
    K = np.block([[A, B.T], [B, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([f, g]))
    x, lam, info = solve_saddle(sp.csr_matrix(A), sp.csr_matrix(B), f, g)
    assert np.allclose(x, ref[:n], atol=1e-7)
    assert np.allclose(lam, ref[n:], atol=1e-7)
    assert info.iterations > 0
    assert not info.augmented


def test_saddle_semidefinite_block():
    # pure-Neumann style block: Laplacian with no pinning, constant null space,
    # constraint mean(x) = 1 restores uniqueness
    n = 25
    A = poisson1d(n).toarray()
    A[0, 0] = 1.0  # Neumann both ends
    A[-1, -1] = 1.0
    B = np.ones((1, n)) / n
    f = np.zeros(n)
    g = np.array([1.0])
    x, lam, info = solve_saddle(sp.csr_matrix(A), sp.csr_matrix(B), f, g)
    assert info.augmented
    assert abs(x.mean() - 1.0) < 1e-8
    assert np.allclose(x, np.ones(n), atol=1e-7)  # constant solves Neumann exactly


def test_saddle_zero_constraint_row():
    A = sp.identity(4, format="csr")
    B = sp.csr_matrix(np.zeros((1, 4)))
    with pytest.raises(SingularSchur):
        solve_saddle(A, B, np.ones(4), np.zeros(1))


def test_saddle_redundant_constraints():
    A = sp.identity(4, format="csr")
    B = sp.csr_matrix(np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]]))
    with pytest.raises((SingularSchur, NotConverged)):
        solve_saddle(A, B, np.ones(4), np.array([0.0, 1.0]))
