import math

import numpy as np
import pytest

from trellis import autodiff as ad
from trellis.nonlinear import (CONVERGED, FAILED, UNCONVERGED, FunctionModel, NewtonConfig,
                               SolverState, anderson_solve, combo_and, combo_or, jfnk_apply,
                               max_iters, nan_detect, newton_solve, norm_f_abs, norm_f_rel,
                               stagnation, status_evaluate, wrms)


def _state(F, x=None, dx=None, iteration=0, norms=None):
    F = np.asarray(F, dtype=float)
    x = np.zeros_like(F) if x is None else np.asarray(x, dtype=float)
    return SolverState(F, x, None if dx is None else np.asarray(dx, dtype=float), iteration,
                       list(norms or [float(np.linalg.norm(F))]))


# -- status tests --------------------------------------------------------------
def test_norm_f_abs():
    assert status_evaluate(norm_f_abs(1e-8), _state([1e-9])) == CONVERGED
    assert status_evaluate(norm_f_abs(1e-8), _state([1e-7])) == UNCONVERGED


def test_norm_f_rel_uses_initial_norm():
    st = _state([1e-3], norms=[100.0, 1.0, 1e-3])
    assert norm_f_rel(1e-6).evaluate(st) == UNCONVERGED
    st = _state([9e-5], norms=[100.0, 9e-5])
    assert norm_f_rel(1e-6).evaluate(st) == CONVERGED


def test_wrms():
    assert wrms(1e-6, 1e-10).evaluate(_state([1.0], x=[1.0], dx=[0.0])) == CONVERGED
    assert wrms(1e-6, 1e-10).evaluate(_state([1.0], x=[1.0])) == UNCONVERGED
    # dx = 2e-6, weight = 1e-6 * 1 + 0 -> value 2
    w = wrms(1e-6, 0.0)
    assert w.value(_state([1.0], x=[1.0], dx=[2e-6])) == pytest.approx(2.0)


def test_max_iters_and_nan():
    assert max_iters(10).evaluate(_state([1.0], iteration=9)) == UNCONVERGED
    assert max_iters(10).evaluate(_state([1.0], iteration=10)) == FAILED
    assert nan_detect().evaluate(_state([np.nan])) == FAILED
    assert nan_detect().evaluate(_state([1.0], x=[np.inf])) == FAILED
    assert nan_detect().evaluate(_state([1.0])) == UNCONVERGED


def test_combo_and_fails_past_max_iters():
    tree = combo_and(norm_f_rel(1e-6), max_iters(10))
    assert status_evaluate(tree, _state([1.0], iteration=11, norms=[1.0] * 12)) == FAILED
    # max_iters never reports converged, so an 'and' with it can only fail
    assert status_evaluate(tree, _state([1e-9], iteration=3, norms=[1.0, 1e-9])) == UNCONVERGED


def test_combo_or():
    tree = combo_or(nan_detect(), norm_f_abs(1e-8))
    assert tree.evaluate(_state([1e-9])) == CONVERGED
    assert tree.evaluate(_state([np.nan])) == FAILED
    assert tree.evaluate(_state([1.0])) == UNCONVERGED


def test_stagnation_window():
    st = stagnation(window=3, factor=1.0)
    assert st.evaluate(_state([1.0], norms=[1.0, 1.0, 1.0])) == UNCONVERGED
    assert st.evaluate(_state([1.0], norms=[1.0, 1.0, 1.0, 1.0])) == FAILED
    assert st.evaluate(_state([1.0], norms=[1.0, 1.0, 0.5, 1.0])) == UNCONVERGED


def test_combo_requires_children():
    with pytest.raises(ValueError):
        combo_or()


# -- Newton ----------------------------------------------------------------------
def test_linear_problem_one_iteration():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    model = FunctionModel(lambda x: A @ x - b, jacobian=lambda x: A)
    x, hist = newton_solve(model, np.zeros(2), combo_or(norm_f_abs(1e-12), max_iters(5)))
    assert hist.converged and hist.iterations == 1
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-14)


def test_babylonian_iterates():
    model = FunctionModel(lambda x: x ** 2 - 2, jacobian=lambda x: np.diag(2 * x))
    x, hist = newton_solve(model, [1.0], combo_or(norm_f_abs(1e-14), max_iters(20)))
    its = [float(v[0]) for v in hist.iterates[:4]]
    np.testing.assert_allclose(its, [1.0, 1.5, 17 / 12, 577 / 408], rtol=1e-15)
    assert x[0] == pytest.approx(math.sqrt(2.0), rel=1e-15)


def test_nan_at_start_fails_immediately():
    with np.errstate(invalid="ignore"):
        x, hist = newton_solve(lambda x: np.log(x), [-1.0])
    assert hist.status == FAILED and hist.iterations == 0
    assert "NaNDetect" in hist.reason


def test_max_iters_reason():
    # cos(x) - x from far away with one step only
    model = FunctionModel(lambda x: np.cos(x) - x)
    _, hist = newton_solve(model, [3.0], combo_or(norm_f_abs(1e-14), max_iters(1)))
    assert hist.status == FAILED and "MaxIters" in hist.reason


def _system(x):
    return [x[0] ** 2 + x[1] ** 2 - 4.0, ad.exp(x[0]) + x[1] - 1.0]


@pytest.mark.parametrize("mode, solver", [("matrix", "direct"), ("matrix", "gmres"),
                                          ("matrix_free_fd", "gmres"),
                                          ("matrix_free_ad", "gmres")])
def test_jacobian_modes_reach_same_root(mode, solver):
    cfg = NewtonConfig(jacobian_mode=mode, linear_solver=solver, forcing=1e-10)
    x, hist = newton_solve(lambda x: np.array(_system(x), dtype=object), [1.0, -1.5],
                           combo_or(nan_detect(), norm_f_abs(1e-10), max_iters(40)), cfg)
    assert hist.converged
    assert np.linalg.norm(np.array(_system(x), dtype=float)) <= 1e-10
    if solver == "gmres":
        assert all(k >= 1 for k in hist.linear_iterations)


def test_ad_and_fd_iterates_agree():
    tree = combo_or(nan_detect(), norm_f_abs(1e-11), max_iters(30))
    F = lambda x: np.array(_system(x), dtype=object)
    _, h_ad = newton_solve(F, [1.0, -1.5], tree, NewtonConfig())
    _, h_fd = newton_solve(F, [1.0, -1.5], tree,
                           NewtonConfig(jacobian_mode="matrix_free_fd", linear_solver="gmres",
                                        forcing=1e-12))
    n = min(len(h_ad.iterates), len(h_fd.iterates))
    assert n >= 4
    for a, b in zip(h_ad.iterates[:n], h_fd.iterates[:n]):
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_line_search_decreases_residual():
    cfg = NewtonConfig(line_search="backtracking")
    x, hist = newton_solve(lambda x: np.arctan(x), [3.0], None, cfg)
    assert hist.converged and abs(x[0]) < 1e-10
    assert all(b < a for a, b in zip(hist.norms, hist.norms[1:]))
    assert hist.step_lengths[0] < 1.0
    for phi0, phi, lam, slope in hist.armijo:
        assert phi <= phi0 + cfg.armijo_c * lam * slope


def test_full_step_diverges_on_arctan():
    x, hist = newton_solve(lambda x: np.arctan(x), [3.0],
                           combo_or(nan_detect(), norm_f_abs(1e-10), max_iters(6)))
    assert not hist.converged
    assert abs(hist.iterates[-1][0]) > 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(line_search="cubic").validate()
    with pytest.raises(ValueError):
        NewtonConfig(jacobian_mode="matrix_free_fd", linear_solver="direct").validate()
    with pytest.raises(ValueError):
        NewtonConfig(forcing=1.5).validate()


def test_config_from_parameters():
    from trellis.paramlist import ParameterList

    p = ParameterList.from_text('{"nonlinear: line search": "backtracking", '
                                '"nonlinear: jacobian mode": "matrix_free_ad", '
                                '"nonlinear: linear solver": "gmres"}')
    cfg = NewtonConfig.from_parameters(p)
    assert cfg.line_search == "backtracking" and cfg.jacobian_mode == "matrix_free_ad"


# -- JFNK ------------------------------------------------------------------------
def test_jfnk_linear():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 5))
    x, v = rng.standard_normal(5), rng.standard_normal(5)
    F = lambda z: A @ z
    np.testing.assert_allclose(jfnk_apply(F, x, v), A @ v, rtol=1e-7, atol=1e-7)
    np.testing.assert_allclose(jfnk_apply(F, x, 1e6 * v), 1e6 * (A @ v), rtol=1e-7)


def test_jfnk_constant_and_zero_direction():
    F = lambda z: np.array([2.0, -1.0])
    np.testing.assert_array_equal(jfnk_apply(F, [0.3, 0.1], [1.0, 1.0]), [0.0, 0.0])
    with pytest.raises(ValueError):
        jfnk_apply(F, [0.3, 0.1], [0.0, 0.0])


# -- Anderson --------------------------------------------------------------------
def test_anderson_depth0_is_fixed_point_iteration():
    G = lambda x: np.cos(x)
    tree = combo_or(norm_f_abs(1e-10), max_iters(200))
    _, hist = anderson_solve(G, [1.0], depth=0, status=tree)
    x = np.array([1.0])
    for it in hist.iterates:
        np.testing.assert_array_equal(it, x)
        x = np.cos(x)


def test_anderson_mixing_damps():
    _, hist = anderson_solve(lambda x: 0.5 * x, [1.0], depth=0, mixing=0.5,
                             status=combo_or(norm_f_abs(1e-12), max_iters(3)))
    # x <- x + 0.5 (0.5x - x) = 0.75 x
    np.testing.assert_allclose([v[0] for v in hist.iterates], [1.0, 0.75, 0.5625, 0.421875])


def test_anderson_affine_exact():
    x, hist = anderson_solve(lambda x: 0.5 * x, [1.0], depth=1,
                             status=combo_or(norm_f_abs(1e-14), max_iters(10)))
    assert hist.converged and hist.iterations <= 2
    assert abs(x[0]) < 1e-14


def test_anderson_accelerates_linear_system():
    rng = np.random.default_rng(7)
    M = rng.standard_normal((20, 20))
    M = 0.95 * M / np.linalg.norm(M, 2)
    c = rng.standard_normal(20)
    G = lambda x: M @ x + c
    tree = combo_or(norm_f_abs(1e-10), max_iters(2000))
    _, plain = anderson_solve(G, np.zeros(20), depth=0, status=tree)
    x, acc = anderson_solve(G, np.zeros(20), depth=10, status=tree)
    assert acc.converged and acc.iterations < plain.iterations
    np.testing.assert_allclose(x, np.linalg.solve(np.eye(20) - M, c), atol=1e-8)


def test_anderson_identity_stagnates():
    tree = combo_or(stagnation(), max_iters(50))
    _, hist = anderson_solve(lambda x: x, [1.0, 2.0], depth=2, status=tree)
    assert hist.status == FAILED and "Stagnation" in hist.reason
    # a pure translation keeps the residual norm constant as well
    _, hist = anderson_solve(lambda x: x + 1.0, [0.0], depth=0,
                             status=combo_or(norm_f_abs(1e-8), stagnation(), max_iters(50)))
    assert hist.status == FAILED and "Stagnation" in hist.reason and hist.iterations == 5


def test_anderson_argument_checks():
    with pytest.raises(ValueError):
        anderson_solve(lambda x: x, [0.0], depth=-1)
    with pytest.raises(ValueError):
        anderson_solve(lambda x: x, [0.0], mixing=0.0)
