"""Relaxation, Chebyshev, ILU(k), Schwarz and 2x2 block preconditioners."""

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from trellis.comm import launch, serial_comm
from trellis.core import CsrMatrix, MultiVector
from trellis.harness.problems import gen_poisson_1d, gen_poisson_2d
from trellis.krylov import solve_cg
from trellis.smoothers import (ILU, AdditiveSchwarz, BlockOperator2x2, BlockPreconditioner2x2,
                               Chebyshev, DirectSolver, Relaxation, ZeroDiagonalError,
                               ZeroPivotError, block_precond_2x2, estimate_lambda_max, ilu_factor,
                               ilu_solve, relax_apply, schwarz_apply)


def _mv(A, v):
    return MultiVector.from_global(A.row_map, np.asarray(v, dtype=float))


def poisson1d(n):
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n), format="csr")


# -- relaxation ----------------------------------------------------------------------
def test_jacobi_identity_exact():
    Id = CsrMatrix.from_dense(np.eye(4))
    b = _mv(Id, [1.0, 2.0, 3.0, 4.0])
    x = relax_apply(Id, b, b.zeros_like(), "jacobi", 1, 1.0)
    np.testing.assert_array_equal(x.local, b.local)


def test_forward_gs_lower_triangular_exact():
    L = np.array([[2.0, 0, 0], [1.0, 3.0, 0], [-1.0, 2.0, 4.0]])
    A = CsrMatrix.from_dense(L)
    b = np.array([1.0, 2.0, 3.0])
    x = relax_apply(A, _mv(A, b), _mv(A, np.zeros(3)), "gauss_seidel_forward", 1)
    np.testing.assert_allclose(x.local[:, 0], np.linalg.solve(L, b), rtol=1e-15)


def test_hybrid_gs_two_ranks_matches_block_oracle():
    n, sweeps = 8, 3
    A = poisson1d(n).toarray()
    b = np.arange(1.0, n + 1)
    blocks = [np.arange(0, 4), np.arange(4, 8)]
    inblock = np.zeros_like(A, dtype=bool)
    for blk in blocks:
        inblock[np.ix_(blk, blk)] = True
    lower = np.where(inblock, np.tril(A), 0.0)
    rest = A - lower
    x = np.zeros(n)
    for _ in range(sweeps):
        x = np.linalg.solve(lower, b - rest @ x)

    def prog(c):
        Ad = CsrMatrix.from_global(c, sp.csr_matrix(A))
        bd = _mv(Ad, b)
        return relax_apply(Ad, bd, bd.zeros_like(), "gauss_seidel_forward", sweeps).to_global()

    np.testing.assert_allclose(launch(2, prog)[0][:, 0], x, rtol=1e-14)


def test_zero_diagonal_error():
    A = CsrMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 2.0]]))
    with pytest.raises(ZeroDiagonalError):
        Relaxation("jacobi").fit(A)


def test_symmetric_gs_operator_symmetric():
    pb = gen_poisson_2d(6, 6)
    M = Relaxation("gauss_seidel_symmetric").fit(pb.A)
    Md = np.column_stack([M.apply(_mv(pb.A, e)).local[:, 0] for e in np.eye(pb.size)])
    np.testing.assert_allclose(Md, Md.T, atol=1e-13)


# -- eigenvalue estimate and Chebyshev -------------------------------------------------
def test_lambda_max_scaled_identity():
    assert estimate_lambda_max(CsrMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))) == pytest.approx(1.1)
    assert estimate_lambda_max(CsrMatrix.from_dense(np.eye(5))) == pytest.approx(1.1)


def test_lambda_max_poisson_window():
    A = CsrMatrix.from_global(serial_comm(), poisson1d(32))
    est = estimate_lambda_max(A)
    true = np.max(np.linalg.eigvalsh(poisson1d(32).toarray() / 2.0))
    assert 0.9 * 2.2 <= est <= 1.1 * 2.2
    assert est <= 1.1 * true + 1e-12


def test_chebyshev_degree1_is_damped_jacobi():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((10, 10))
    A = G @ G.T + 10 * np.eye(10)
    Ad = CsrMatrix.from_dense(A)
    r = rng.standard_normal(10)
    lmax, ratio = 2.5, 20.0
    z = Chebyshev(1, lmax, ratio).fit(Ad).apply(_mv(Ad, r)).local[:, 0]
    omega = 2.0 / (lmax / ratio + lmax)
    np.testing.assert_allclose(z, omega * r / np.diag(A), rtol=0, atol=1e-12)


@pytest.mark.parametrize("degree", [1, 2, 3, 5])
def test_chebyshev_identity_residual_polynomial(degree):
    # on A = I the smoother scales b by 1 - T_d((theta-1)/delta) / T_d(theta/delta)
    Id = CsrMatrix.from_dense(np.eye(6))
    b = np.linspace(-1, 1, 6)
    z = Chebyshev(degree, lambda_max=1.0, eigen_ratio=30.0).fit(Id).apply(_mv(Id, b))
    lmin, lmax = 1.0 / 30.0, 1.0
    theta, delta = (lmax + lmin) / 2, (lmax - lmin) / 2
    Td = np.polynomial.chebyshev.Chebyshev.basis(degree)
    factor = 1.0 - Td((theta - 1.0) / delta) / Td(theta / delta)
    np.testing.assert_allclose(z.local[:, 0], factor * b, atol=1e-12)


def test_chebyshev_beats_jacobi_as_preconditioner():
    pb = gen_poisson_2d(64, 64)
    _, r_cheb = solve_cg(pb.A, Chebyshev(3).fit(pb.A), pb.b)
    _, r_jac = solve_cg(pb.A, Relaxation("jacobi", sweeps=3).fit(pb.A), pb.b)
    assert r_cheb.converged and r_jac.converged
    assert r_cheb.iterations < r_jac.iterations


def test_chebyshev_invalid_interval():
    with pytest.raises(ValueError):
        Chebyshev(2, lambda_max=-1.0).fit(CsrMatrix.from_dense(np.eye(2)))


# -- ILU ----------------------------------------------------------------------------------
def test_ilu0_tridiagonal_exact():
    T = poisson1d(12) + sp.diags(np.linspace(0, 1, 12))
    f = ilu_factor(T, 0)
    P, L, U = sla.lu(T.toarray())
    np.testing.assert_allclose(f.L.toarray(), L, atol=1e-14)
    np.testing.assert_allclose(f.U.toarray(), U, atol=1e-14)
    r = np.arange(12.0)
    np.testing.assert_allclose(ilu_solve(f, r), np.linalg.solve(T.toarray(), r), atol=1e-12)


def test_ilu_full_fill_is_complete_lu():
    rng = np.random.default_rng(7)
    A = sp.random(20, 20, density=0.2, random_state=rng).toarray()
    A += np.diag(np.abs(A).sum(axis=1) + 1.0)
    f = ilu_factor(sp.csr_matrix(A), 20)
    assert np.linalg.norm(A - (f.L @ f.U).toarray()) <= 1e-12 * np.linalg.norm(A)


def test_ilu0_keeps_pattern_and_levels():
    pb = gen_poisson_2d(5, 5)
    B = pb.A.to_global()
    f0, f1 = ilu_factor(B, 0), ilu_factor(B, 1)
    assert (f0.L + f0.U).nnz == B.nnz
    assert (f1.L + f1.U).nnz > B.nnz
    assert f1.levels.data.max() == 1


def test_ilu_level1_fill_hand_example():
    # arrow-free 4x4 where eliminating row 0 creates fill (1,2) and (2,1) at level 1
    A = np.array([[4.0, 1.0, 1.0, 0.0], [1.0, 4.0, 0.0, 1.0],
                  [1.0, 0.0, 4.0, 1.0], [0.0, 1.0, 1.0, 4.0]])
    lv = ilu_factor(sp.csr_matrix(A), 1).levels.toarray()
    assert lv[1, 2] == 1 and lv[2, 1] == 1
    assert (ilu_factor(sp.csr_matrix(A), 0).L + ilu_factor(sp.csr_matrix(A), 0).U)[1, 2] == 0


def test_ilu_zero_pivot():
    A = sp.csr_matrix(np.array([[0.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ZeroPivotError):
        ilu_factor(A, 0)


def test_ilu_estimator_block_jacobi():
    def prog(c):
        pb = gen_poisson_1d(10, c)
        return ILU().fit(pb.A).apply(pb.b).to_global()[:, 0]

    A = poisson1d(10).toarray()
    b = A @ np.ones(10)
    ref = np.concatenate([np.linalg.solve(A[:5, :5], b[:5]), np.linalg.solve(A[5:, 5:], b[5:])])
    np.testing.assert_allclose(launch(2, prog)[0], ref, rtol=1e-13)


# -- Schwarz ---------------------------------------------------------------------------------
def test_schwarz_single_domain_exact():
    pb = gen_poisson_2d(5, 5)
    r = _mv(pb.A, np.arange(25.0))
    z = schwarz_apply(pb.A, r, overlap=0)
    np.testing.assert_allclose(z.local[:, 0],
                               np.linalg.solve(pb.A.to_global().toarray(), np.arange(25.0)),
                               rtol=1e-12)


def test_schwarz_delta0_block_jacobi():
    A = poisson1d(10).toarray()
    r = np.linspace(1, 2, 10)
    ref = np.concatenate([np.linalg.solve(A[:5, :5], r[:5]), np.linalg.solve(A[5:, 5:], r[5:])])

    def prog(c):
        Ad = CsrMatrix.from_global(c, sp.csr_matrix(A))
        return schwarz_apply(Ad, _mv(Ad, r), overlap=0).to_global()[:, 0]

    np.testing.assert_allclose(launch(2, prog)[0], ref, rtol=1e-13)


def test_schwarz_overlap_one_by_hand():
    # rank 0 overlapped set {0..5}, rank 1 {4..9}; additive sums both solves
    A = poisson1d(10).toarray()
    r = np.ones(10)
    z = np.zeros(10)
    for idx in (np.arange(0, 6), np.arange(4, 10)):
        z[idx] += np.linalg.solve(A[np.ix_(idx, idx)], r[idx])

    def prog(c):
        Ad = CsrMatrix.from_global(c, sp.csr_matrix(A))
        return schwarz_apply(Ad, _mv(Ad, r), overlap=1).to_global()[:, 0]

    np.testing.assert_allclose(launch(2, prog)[0], z, rtol=1e-13)


def test_schwarz_overlap_reduces_iterations():
    def prog(c, delta):
        pb = gen_poisson_2d(24, 24, c, partition="rcb")
        return solve_cg(pb.A, AdditiveSchwarz(delta).fit(pb.A), pb.b)[1].iterations

    assert launch(4, prog, 1)[0] < launch(4, prog, 0)[0]


def test_restricted_additive_keeps_owned_part():
    def prog(c, mode):
        pb = gen_poisson_1d(12, c)
        return AdditiveSchwarz(1, combine_mode=mode).fit(pb.A).apply(pb.b).to_global()[:, 0]

    A = poisson1d(12).toarray()
    r = A @ np.ones(12)
    ras = launch(2, prog, "restricted_additive")[0]
    i0, i1 = np.arange(0, 7), np.arange(5, 12)
    np.testing.assert_allclose(ras[:6], np.linalg.solve(A[np.ix_(i0, i0)], r[i0])[:6], rtol=1e-13)
    np.testing.assert_allclose(ras[6:], np.linalg.solve(A[np.ix_(i1, i1)], r[i1])[1:], rtol=1e-13)


def test_schwarz_ilu_subdomain_and_bad_mode():
    pb = gen_poisson_2d(6, 6)
    z = AdditiveSchwarz(0, subdomain_solver="ilu", fill_level=30).fit(pb.A).apply(pb.b)
    np.testing.assert_allclose(z.local[:, 0], 1.0, rtol=1e-10)
    with pytest.raises(ValueError):
        AdditiveSchwarz(combine_mode="multiplicative").fit(pb.A)


# -- 2x2 blocks ------------------------------------------------------------------------------
def _block_case(A):
    Ad = CsrMatrix.from_dense(A)
    return Ad, BlockPreconditioner2x2


def test_block_decoupled_kinds_coincide():
    A = np.diag([2.0, 3.0, 4.0, 5.0])
    A[0, 1] = A[1, 0] = 0.5
    A[2, 3] = A[3, 2] = 0.25
    Ad = CsrMatrix.from_dense(A)
    r = _mv(Ad, [1.0, 2.0, 3.0, 4.0])
    out = [BlockPreconditioner2x2(2, kind).fit(Ad).apply(r).local[:, 0]
           for kind in ("block_jacobi", "block_gauss_seidel", "block_lu")]
    for z in out:
        np.testing.assert_allclose(z, np.linalg.solve(A, r.local[:, 0]), rtol=1e-13)


def test_block_lu_exact_schur():
    A = np.array([[4.0, 1.0, 1.0, 0.0], [1.0, 3.0, 0.0, 1.0],
                  [2.0, 0.0, 5.0, 1.0], [0.0, 1.0, 1.0, 6.0]])
    Ad = CsrMatrix.from_dense(A)
    blocks = [CsrMatrix.from_dense(B) for B in (A[:2, :2], A[:2, 2:], A[2:, :2], A[2:, 2:])]
    S = A[2:, 2:] - A[2:, :2] @ np.linalg.solve(A[:2, :2], A[:2, 2:])
    op = BlockOperator2x2(*blocks, DirectSolver().fit(blocks[0]), DirectSolver().fit(blocks[3]),
                          DirectSolver().fit(CsrMatrix.from_dense(S)))
    r = np.array([1.0, -1.0, 2.0, 0.5])
    z0, z1 = block_precond_2x2(op, "block_lu", _mv(blocks[0], r[:2]), _mv(blocks[3], r[2:]))
    np.testing.assert_allclose(np.concatenate([z0.local[:, 0], z1.local[:, 0]]),
                               np.linalg.solve(A, r), rtol=1e-13)


def test_block_gs_lower_triangular_exact():
    A = np.array([[4.0, 1.0, 0.0, 0.0], [1.0, 3.0, 0.0, 0.0],
                  [2.0, 0.5, 5.0, 1.0], [0.0, 1.0, 1.0, 6.0]])
    Ad = CsrMatrix.from_dense(A)
    r = _mv(Ad, [1.0, 2.0, 3.0, 4.0])
    z = BlockPreconditioner2x2(2, "block_gauss_seidel").fit(Ad).apply(r)
    np.testing.assert_allclose(z.local[:, 0], np.linalg.solve(A, r.local[:, 0]), rtol=1e-13)


def test_block_unknown_kind():
    Ad = CsrMatrix.from_dense(np.eye(4))
    with pytest.raises(ValueError):
        BlockPreconditioner2x2(2, "block_sor").fit(Ad).apply(_mv(Ad, np.ones(4)))


# -- property: SGS symmetry on random SPD matrices ------------------------------------------
@settings(max_examples=15, deadline=None)
@given(st.integers(3, 20), st.integers(0, 2 ** 16))
def test_sgs_symmetry_property(n, seed):
    rng = np.random.default_rng(seed)
    G = sp.random(n, n, density=0.3, random_state=rng).toarray()
    A = G + G.T + np.diag(np.abs(G).sum(0) + np.abs(G).sum(1) + 1.0)
    Ad = CsrMatrix.from_dense(A)
    M = Relaxation().fit(Ad)
    r, s = rng.standard_normal(n), rng.standard_normal(n)
    a = r @ M.apply(_mv(Ad, s)).local[:, 0]
    b = s @ M.apply(_mv(Ad, r)).local[:, 0]
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))
