import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from trellis.timeint import (BACKWARD_EULER, BOGACKI_SHAMPINE, FORWARD_EULER, RK4, SDIRK2,
                             TRAPEZOIDAL, BDF2Stepper, ButcherTableau, SolutionHistory,
                             StepControl, StepSizeError, integrate, make_stepper, order_verify,
                             replay, step_bdf2, step_dirk, step_erk)

decay = lambda t, x: -x
grow = lambda t, x: x


# -- single steps ----------------------------------------------------------------
def test_rk4_step_on_growth():
    x, err = step_erk(RK4, grow, 0.0, [1.0], 0.1)
    # Taylor polynomial of e^h through h^4
    assert x[0] == pytest.approx(1 + 0.1 + 0.005 + 0.1 ** 3 / 6 + 0.1 ** 4 / 24, rel=1e-15)
    assert x[0] == pytest.approx(1.1051708333, abs=1e-10)
    assert err is None


def test_forward_euler_step():
    x, _ = step_erk(FORWARD_EULER, grow, 0.0, [1.0], 0.1)
    assert x[0] == pytest.approx(1.1, rel=1e-15)


def test_zero_rhs_leaves_state_unchanged():
    x0 = np.array([1.0, -2.0, 3.5])
    zero = lambda t, x: np.zeros_like(x)
    for tab in (FORWARD_EULER, RK4, BOGACKI_SHAMPINE):
        np.testing.assert_array_equal(step_erk(tab, zero, 0.0, x0, 0.3)[0], x0)
    for tab in (BACKWARD_EULER, SDIRK2):
        np.testing.assert_array_equal(step_dirk(tab, zero, 0.0, x0, 0.3)[0], x0)


def test_backward_euler_step():
    x, _ = step_dirk(BACKWARD_EULER, decay, 0.0, [1.0], 0.1)
    assert x[0] == pytest.approx(1 / 1.1, rel=1e-13)


def test_trapezoidal_step():
    x, _ = step_dirk(TRAPEZOIDAL, decay, 0.0, [1.0], 0.1)
    assert x[0] == pytest.approx(0.95 / 1.05, rel=1e-13)


def test_backward_euler_is_contractive_on_stiff_decay():
    f = lambda t, x: -1000.0 * x
    x = np.array([1.0])
    for k in range(1, 6):
        x_new, _ = step_dirk(BACKWARD_EULER, f, 0.0, x, 0.1)
        assert abs(x_new[0]) < abs(x[0])
        assert x_new[0] == pytest.approx(101.0 ** -k, rel=1e-10)
        x = x_new
    fe, _ = step_erk(FORWARD_EULER, f, 0.0, [1.0], 0.1)
    assert abs(fe[0]) > 1.0


def test_embedded_error_vector():
    x, err = step_erk(BOGACKI_SHAMPINE, grow, 0.0, [1.0], 0.1)
    assert err is not None and abs(err[0]) < 1e-4
    assert abs(x[0] - math.exp(0.1)) < 1e-5


def test_step_rejects_wrong_kind():
    with pytest.raises(ValueError):
        step_erk(BACKWARD_EULER, decay, 0.0, [1.0], 0.1)
    with pytest.raises(ValueError):
        step_erk(RK4, decay, 0.0, [1.0], 0.0)


# -- BDF2 ------------------------------------------------------------------------
def test_bdf2_constant_solution():
    zero = lambda t, x: np.zeros_like(x)
    x, status = step_bdf2([(0.0, np.array([2.0])), (0.1, np.array([2.0]))], zero, 0.1)
    assert status == "bdf2" and x[0] == 2.0


def test_bdf2_bootstrap():
    x, status = step_bdf2([(0.0, np.array([1.0]))], decay, 0.1)
    assert status == "bootstrap"
    assert x[0] == pytest.approx(1 / 1.1, rel=1e-13)


def test_bdf2_matches_scalar_root():
    # y' = -y^3 with unequal steps; the variable-step BDF2 formula reads
    # x_{n+1} - a x_n + c x_{n-1} = h beta f(x_{n+1})
    f = lambda t, x: -x ** 3
    h_prev, h = 0.1, 0.15
    x_m, x_n = 1.0, 0.9
    w = h / h_prev
    a, c, beta = (1 + w) ** 2 / (1 + 2 * w), w * w / (1 + 2 * w), (1 + w) / (1 + 2 * w)
    ref = brentq(lambda y: y - a * x_n + c * x_m + h * beta * y ** 3, 0.0, 1.0, xtol=1e-15)
    x, status = step_bdf2([(0.0, np.array([x_m])), (h_prev, np.array([x_n]))], f, h)
    assert status == "bdf2"
    assert x[0] == pytest.approx(ref, rel=1e-12)


def test_bdf2_exact_for_quadratics():
    # BDF2 integrates x' = 2t exactly from exact starting values
    f = lambda t, x: np.array([2.0 * t])
    x, _ = step_bdf2([(0.0, np.array([0.0])), (0.2, np.array([0.04]))], f, 0.3)
    assert x[0] == pytest.approx(0.25, rel=1e-12)


# -- integrate -------------------------------------------------------------------
def test_fixed_steps_land_on_tf():
    x, hist, stats = integrate("rk4", decay, 0.0, 1.0, [1.0], StepControl(dt_init=0.3))
    assert hist.times[-1] == 1.0
    assert stats.accepted == 4
    np.testing.assert_allclose(np.diff(hist.times), [0.3, 0.3, 0.3, 0.1], rtol=1e-12)


def test_adaptive_rk4_accuracy():
    ctrl = StepControl(dt_init=0.1, rtol=1e-8, atol=1e-10)
    x, hist, stats = integrate("rk4", grow, 0.0, 1.0, [1.0], ctrl)
    assert abs(x[0] - math.e) <= 1e-6
    assert all(e <= 1.0 for e in stats.error_norms)
    assert np.all(np.diff(hist.times) > 0)
    assert {e.status for e in list(hist)[1:]} == {"doubled"}


def test_adaptive_embedded_pair():
    ctrl = StepControl(dt_init=0.5, rtol=1e-6, atol=1e-9)
    x, hist, stats = integrate("bogacki_shampine", decay, 0.0, 2.0, [1.0], ctrl)
    assert abs(x[0] - math.exp(-2.0)) < 1e-5
    assert stats.rejected >= 1
    assert all(e <= 1.0 for e in stats.error_norms)


def test_dt_min_abort():
    ctrl = StepControl(dt_init=0.1, dt_min=0.05, rtol=1e-12, atol=1e-14)
    with pytest.raises(StepSizeError):
        integrate("forward_euler", grow, 0.0, 1.0, [1.0], ctrl)


def test_bdf2_adaptive_refused():
    with pytest.raises(ValueError):
        integrate("bdf2", decay, 0.0, 1.0, [1.0], StepControl(dt_init=0.1, rtol=1e-6))


def test_step_control_validation():
    with pytest.raises(ValueError):
        StepControl(dt_init=0.1, dt_min=0.2)
    with pytest.raises(ValueError):
        StepControl(dt_init=0.1, rtol=0.0, atol=0.0)


def test_history_capacity_and_order():
    h = SolutionHistory(3)
    for k in range(5):
        h.add(0.1 * k, [k])
    assert len(h) == 3
    np.testing.assert_allclose(h.times, [0.2, 0.3, 0.4])
    with pytest.raises(ValueError):
        h.add(0.4, [0.0])
    with pytest.raises(ValueError):
        SolutionHistory(2)


@pytest.mark.parametrize("name, ctrl", [
    ("rk4", StepControl(dt_init=0.1, rtol=1e-7, atol=1e-9)),
    ("bogacki_shampine", StepControl(dt_init=0.1, rtol=1e-6, atol=1e-9)),
    ("sdirk2", StepControl(dt_init=0.05)),
    ("bdf2", StepControl(dt_init=0.05)),
])
def test_replay_is_bitwise(name, ctrl):
    f = lambda t, x: np.array([x[1], -x[0] - 0.1 * x[1]])
    x, hist, _ = integrate(name, f, 0.0, 1.0, [1.0, 0.0], ctrl)
    again = replay(hist, name, f)
    assert len(again) == len(hist)
    for a, e in zip(again, hist):
        np.testing.assert_array_equal(a, e.x)


def test_tableau_validation():
    with pytest.raises(ValueError):
        ButcherTableau([[0, 0], [0.5, 0]], [0.5, 0.5], c=[0.0, 0.4])
    with pytest.raises(ValueError):
        ButcherTableau([[0, 1], [0, 0]], [0.5, 0.5])
    with pytest.raises(ValueError):
        ButcherTableau([[0.0]], [0.5, 0.5])


def test_make_stepper():
    assert make_stepper("RK Explicit 4 Stage").tableau is RK4
    assert isinstance(make_stepper("bdf2"), BDF2Stepper)
    with pytest.raises(ValueError):
        make_stepper("leapfrog")


@settings(max_examples=25, deadline=None)
@given(s=st.floats(-50.0, 50.0).filter(lambda v: abs(v) > 1e-3),
       k=st.sampled_from(["forward_euler", "rk4", "backward_euler", "sdirk2"]))
def test_linear_problems_scale_linearly(s, k):
    f = lambda t, x: np.array([-2.0 * x[0] + x[1], -x[1]])
    x0 = np.array([1.0, 0.5])
    ctrl = StepControl(dt_init=0.1)
    a, _, _ = integrate(k, f, 0.0, 0.5, x0, ctrl)
    b, _, _ = integrate(k, f, 0.0, 0.5, s * x0, ctrl)
    np.testing.assert_allclose(b, s * a, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name, order", [("forward_euler", 1), ("backward_euler", 1),
                                         ("trapezoidal", 2), ("sdirk2", 2), ("rk4", 4),
                                         ("bogacki_shampine", 3), ("bdf2", 2)])
def test_order_verify(name, order):
    hs = [0.1 / 2 ** k for k in range(4)]
    slope = order_verify(name, decay, [1.0], 0.0, 1.0, lambda t: [math.exp(-t)], hs)
    assert abs(slope - order) <= 0.2


def test_order_verify_needs_geometric_sizes():
    with pytest.raises(ValueError):
        order_verify("rk4", decay, [1.0], 0.0, 1.0, lambda t: [math.exp(-t)], [0.1, 0.05, 0.02])
