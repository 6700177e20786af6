"""Krylov solvers: closed-form oracles, breakdowns, invariants."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from trellis.comm import launch
from trellis.core import CsrMatrix, MultiVector
from trellis.harness.problems import gen_convection_diffusion_2d, gen_poisson_2d
from trellis.krylov import (KrylovBreakdown, KrylovSolver, orthonormalize, solve_bicgstab,
                            solve_cg, solve_fixed_point, solve_gmres, solve_pseudo_block_cg)
from trellis.operators import MatrixFreeOperator, ZeroOperator
from trellis.smoothers import DirectSolver, Relaxation

SPD2 = np.array([[4.0, 1.0], [1.0, 3.0]])


# -- CG ----------------------------------------------------------------------------
def test_cg_2x2_closed_form():
    x, rep = solve_cg(SPD2, None, [1.0, 2.0], rtol=1e-14)
    np.testing.assert_allclose(x, [1 / 11, 7 / 11], atol=1e-12)
    assert rep.iterations <= 2 and rep.converged
    assert len(rep.history) == rep.iterations + 1


def test_cg_identity_one_iteration():
    b = np.array([3.0, -1.0, 2.0])
    x, rep = solve_cg(np.eye(3), None, b)
    assert rep.iterations == 1
    np.testing.assert_allclose(x, b)


def test_cg_indefinite_breakdown():
    with pytest.raises(KrylovBreakdown) as info:
        solve_cg(np.diag([1.0, -1.0]), None, [1.0, 1.0])
    assert info.value.report.status == "breakdown"


def test_cg_error_a_norm_decreases():
    pb = gen_poisson_2d(8, 8)
    A = pb.A.to_global().toarray()
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    xs = np.linalg.solve(A, b)
    errs = [np.sqrt((x - xs) @ A @ (x - xs))
            for x in (solve_cg(A, None, b, rtol=0.0, maxit=k)[0] for k in range(0, 20))]
    assert all(e1 < e0 for e0, e1 in zip(errs, errs[1:]))


def test_cg_zero_rhs():
    x, rep = solve_cg(SPD2, None, [0.0, 0.0], x0=[1.0, 1.0])
    assert rep.converged and rep.iterations == 0
    np.testing.assert_array_equal(x, 0.0)


# -- GMRES -------------------------------------------------------------------------
def test_gmres_rotation_matrix():
    x, rep = solve_gmres(np.array([[0.0, 1.0], [-1.0, 0.0]]), None, [1.0, 0.0])
    np.testing.assert_allclose(x, [0.0, 1.0], atol=1e-14)
    assert rep.iterations <= 2


def test_gmres_identity():
    _, rep = solve_gmres(np.eye(4), None, np.arange(1.0, 5.0))
    assert rep.converged and rep.iterations == 1


def test_gmres_restart1_vs_30_monotone():
    pb = gen_poisson_2d(16, 16)
    _, r1 = solve_gmres(pb.A, None, pb.b, restart=1, maxit=300)
    _, r30 = solve_gmres(pb.A, None, pb.b, restart=30, maxit=300)
    assert not r1.converged and r30.converged
    for rep in (r1, r30):
        assert np.all(np.diff(rep.history) <= 0)


@pytest.mark.parametrize("ortho", ["icgs", "dgks", "imgs"])
def test_gmres_orthos_agree(ortho):
    pb = gen_convection_diffusion_2d(10, 10, velocity=(1.0, 0.0), eps=0.1)
    x, rep = solve_gmres(pb.A, None, pb.b, ortho=ortho, rtol=1e-10)
    assert rep.converged
    np.testing.assert_allclose(x.to_global()[:, 0], 1.0, atol=1e-8)


def test_fgmres_variable_preconditioner():
    pb = gen_poisson_2d(10, 10)
    calls = []

    def inner(r):
        calls.append(1)
        # an inner CG with a tolerance that changes every call
        z, _ = solve_cg(pb.A, None, r, rtol=10.0 ** -(1 + len(calls) % 3), maxit=5)
        return z

    M = MatrixFreeOperator(inner, pb.A.domain_map)
    _, rep = solve_gmres(pb.A, M, pb.b, flexible=True, rtol=1e-8)
    assert rep.converged and calls


def test_gmres_unknown_ortho():
    with pytest.raises(ValueError):
        solve_gmres(np.eye(2), None, [1.0, 1.0], ortho="householder")


# -- BiCGStab ------------------------------------------------------------------------
def test_bicgstab_identity():
    _, rep = solve_bicgstab(np.eye(3), None, [1.0, 2.0, 3.0])
    assert rep.iterations == 1


def test_bicgstab_convdiff():
    pb = gen_convection_diffusion_2d(16, 16, velocity=(1.0, 0.5), eps=0.05)
    x, rep = solve_bicgstab(pb.A, None, pb.b, rtol=1e-8)
    assert rep.converged and np.all(np.isfinite(rep.history))
    r = pb.b.to_global()[:, 0] - pb.A.to_global() @ x.to_global()[:, 0]
    assert np.linalg.norm(r) / np.linalg.norm(pb.b.to_global()) <= 1e-8


def test_bicgstab_zero_rhs():
    x, rep = solve_bicgstab(np.eye(3), None, np.zeros(3))
    assert rep.iterations == 0 and not np.any(x)


def test_bicgstab_breakdown_reports_iteration():
    # rhat^T A rhat = 0 for a rotation: rho vanishes after one step
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(KrylovBreakdown) as info:
        solve_bicgstab(A, None, [1.0, 0.0], maxit=5)
    assert info.value.iteration >= 1


# -- pseudo-block CG ------------------------------------------------------------------
def test_pbcg_duplicate_columns():
    pb = gen_poisson_2d(8, 8)
    b = pb.b.to_global()[:, 0]
    X, rep = solve_pseudo_block_cg(pb.A, None, np.column_stack([b, b]))
    x1, _ = solve_cg(pb.A, None, b)
    np.testing.assert_array_equal(X[:, 0], X[:, 1])
    np.testing.assert_allclose(X[:, 0], x1, rtol=1e-12)


def test_pbcg_single_column_matches_cg():
    pb = gen_poisson_2d(8, 8)
    b = pb.b.to_global()[:, 0]
    X, r_pb = solve_pseudo_block_cg(pb.A, None, b.reshape(-1, 1))
    x, r_cg = solve_cg(pb.A, None, b)
    assert r_pb.history == r_cg.history
    np.testing.assert_array_equal(X, x)


def test_pbcg_different_conditioning():
    n = 30
    A = sp.diags(np.linspace(1.0, 100.0, n), format="csr")
    B = np.zeros((n, 2))
    B[:3, 0] = 1.0  # three distinct eigenvalues touched
    B[:, 1] = 1.0
    _, rep = solve_pseudo_block_cg(A, None, B, rtol=1e-10)
    its = [solve_cg(A, None, B[:, j], rtol=1e-10)[1].iterations for j in range(2)]
    assert rep.column_iterations == its
    assert its[0] == 3 and its[1] > its[0]


# -- fixed point ----------------------------------------------------------------------
def test_fixed_point_exact_inverse():
    A = np.array([[4.0, 1.0, 0.0], [1.0, 5.0, 2.0], [0.0, 2.0, 6.0]])
    Ad = CsrMatrix.from_dense(A)
    _, rep = solve_fixed_point(Ad, DirectSolver().fit(Ad), [1.0, 2.0, 3.0])
    assert rep.iterations == 1 and rep.converged


def test_fixed_point_jacobi_matches_richardson():
    A = np.array([[4.0, 1.0, 0.0], [1.0, 5.0, 2.0], [0.0, 2.0, 6.0]])
    b = np.array([1.0, 2.0, 3.0])
    Ad = CsrMatrix.from_dense(A)
    x, rep = solve_fixed_point(Ad, Relaxation("jacobi").fit(Ad), b, rtol=1e-12)
    ref = np.zeros(3)
    for _ in range(rep.iterations):
        ref = ref + (b - A @ ref) / np.diag(A)
    assert rep.converged
    np.testing.assert_array_equal(x, ref)


def test_fixed_point_zero_preconditioner():
    Ad = CsrMatrix.from_dense(SPD2)
    _, rep = solve_fixed_point(Ad, ZeroOperator(Ad.row_map), [1.0, 1.0], maxit=7)
    assert rep.status == "max_iterations" and rep.iterations == 7
    assert rep.history == [1.0] * 8


def test_fixed_point_divergence():
    Ad = CsrMatrix.from_dense(SPD2)
    M = MatrixFreeOperator(lambda r: r.copy().scale(10.0), Ad.domain_map)
    _, rep = solve_fixed_point(Ad, M, [1.0, 1.0], maxit=100)
    assert rep.status == "diverged"


# -- orthonormalization ---------------------------------------------------------------
def test_ortho_empty_basis():
    w = np.array([3.0, 4.0])
    res = orthonormalize(np.zeros((2, 0)), w)
    assert res.coefficients.size == 0 and res.norm == 5.0


@pytest.mark.parametrize("kind", ["icgs", "dgks", "imgs"])
def test_ortho_dependence_signal(kind):
    V = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))[0]
    res = orthonormalize(V, V @ np.array([1.0, -2.0]), kind)
    assert res.dependent
    np.testing.assert_allclose(res.coefficients, [1.0, -2.0])


def test_ortho_distributed_matches_serial():
    rng = np.random.default_rng(1)
    V = np.linalg.qr(rng.standard_normal((12, 3)))[0]
    w = rng.standard_normal(12)
    ref = orthonormalize(V, w, "dgks")

    def prog(c):
        rows = np.array_split(np.arange(12), c.size)[c.rank]
        r = orthonormalize(V[rows], w[rows], "dgks", comm=c)
        return r.coefficients, r.norm

    h, beta = launch(3, prog)[0]
    np.testing.assert_allclose(h, ref.coefficients, rtol=1e-13)
    assert abs(beta - ref.norm) <= 1e-13 * ref.norm


# -- invariants -------------------------------------------------------------------------
@pytest.mark.parametrize("method", ["cg", "gmres", "bicgstab", "pseudo_block_cg", "fixed_point"])
def test_identity_one_iteration_every_solver(method):
    solver = KrylovSolver(method=method).fit(np.eye(5))
    x, rep = solver.solve(np.arange(1.0, 6.0))
    assert rep.iterations == 1 and rep.converged


@pytest.mark.parametrize("method", ["cg", "gmres", "bicgstab"])
def test_matrix_free_identical_iterates(method):
    pb = gen_poisson_2d(10, 10)
    wrapped = MatrixFreeOperator(lambda x: pb.A.apply(x), pb.A.domain_map)
    s1 = KrylovSolver(method=method).fit(pb.A)
    s2 = KrylovSolver(method=method).fit(wrapped)
    x1, r1 = s1.solve(pb.b)
    x2, r2 = s2.solve(pb.b)
    assert r1.history == r2.history
    np.testing.assert_array_equal(x1.local, x2.local)


@pytest.mark.parametrize("P", [2, 4])
def test_distributed_cg_matches_serial(P):
    def prog(c):
        pb = gen_poisson_2d(12, 12, c)
        x, rep = solve_cg(pb.A, None, pb.b)
        return x.to_global()[:, 0], rep.iterations

    x1, it1 = launch(1, prog)[0]
    xP, itP = launch(P, prog)[0]
    assert it1 == itP
    np.testing.assert_allclose(xP, x1, rtol=1e-10)


def test_estimator_params():
    s = KrylovSolver(method="cg", rtol=1e-6)
    assert s.get_params()["rtol"] == 1e-6
    with pytest.raises(ValueError):
        KrylovSolver(method="nope").fit(np.eye(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 25), st.integers(1, 8), st.integers(0, 2 ** 16))
def test_gmres_cycle_monotone_property(n, m, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = solve_gmres(A, None, b, restart=m, maxit=200)
    # a restart recomputes b - A x, whose rounding error bounds any rise
    slack = 10 * np.finfo(float).eps * (np.linalg.norm(b) + np.linalg.norm(A, 2)
                                        * np.linalg.norm(x)) / np.linalg.norm(b)
    bounds = rep.cycle_starts + [rep.iterations]
    for s, e in zip(bounds[:-1], bounds[1:]):
        assert np.all(np.diff(rep.history[s:e + 1]) <= slack)
    assert len(rep.history) == rep.iterations + 1
