import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtscale.errors import NonConvergent, NotRegressive, OutOfWindow, RangeError
from qtscale.qcalc import (ZERO, GridFn, QPoint, TimeScale, Window, circle_minus,
                           delta_integral, mu, q_derivative, regressive_check, rho, sigma,
                           ts_exp)

Q2 = TimeScale(2)
Q3 = TimeScale(3)
Z = TimeScale.integer()


# -- points and jumps ---------------------------------------------------------

def test_ordering():
    assert ZERO < QPoint(-10**9) < QPoint(0) < QPoint(5)
    assert sorted([QPoint(3), ZERO, QPoint(-2)]) == [ZERO, QPoint(-2), QPoint(3)]


@pytest.mark.parametrize("p, up, down", [
    (QPoint(3), QPoint(4), QPoint(2)),
    (QPoint(0), QPoint(1), QPoint(-1)),
    (QPoint(-5), QPoint(-4), QPoint(-6)),
    (QPoint(7), QPoint(8), QPoint(6)),
    (ZERO, ZERO, ZERO),
])
def test_jumps(p, up, down):
    assert sigma(p) == up
    assert rho(p) == down


@given(st.integers(-10**6, 10**6))
def test_jump_inverses(k):
    p = QPoint(k)
    assert rho(sigma(p)) == p and sigma(rho(p)) == p


def test_mu_examples():
    assert mu(QPoint(0), Q2) == 1
    assert mu(QPoint(2), Q3) == 18
    assert mu(ZERO, Q2) == 0
    assert mu(QPoint(4), Z) == 1


def test_mu_is_correctly_rounded():
    q = Fraction(11, 10)
    ts = TimeScale(q)
    for k in (-40, -3, 0, 7, 55):
        exact = q ** (k + 1) - q ** k
        assert ts.mu(k) == float(exact)


def test_values_are_lazy_and_range_checked():
    assert Q2.value(10) == 1024.0
    assert Q2.value(ZERO) == 0.0
    assert Q2.max_exponent == 1023
    with pytest.raises(RangeError):
        Q2.value(1024)
    with pytest.raises(RangeError):
        Q2.value(-1100)
    with pytest.raises(RangeError):
        Q2.mu(1023)
    # points far outside the range still order and jump exactly
    p = QPoint(10**12)
    assert sigma(p).k == 10**12 + 1


def test_timescale_rejects_bad_base():
    for q in (1, 0.5, float("inf"), -3):
        with pytest.raises(ValueError):
            TimeScale(q)


def test_exponent_of():
    assert Q3.exponent_of(81.0) == 4
    assert Q2.exponent_of(0.125) == -3
    with pytest.raises(ValueError):
        Q2.exponent_of(3.0)


# -- GridFn ---------------------------------------------------------------------

def test_gridfn_invariants():
    w = Window(0, 2)
    with pytest.raises(ValueError):
        GridFn(w, np.ones(2))
    with pytest.raises(ValueError):
        GridFn(Window(0, 2, True), np.ones(3))
    g = GridFn(Window(0, 2, True), np.ones(3), [5.0])
    assert g.at(ZERO)[0] == 5.0
    with pytest.raises(OutOfWindow):
        g.at(3)
    with pytest.raises(ValueError):
        g.values[0, 0] = 2.0


def test_window_rejects_empty():
    with pytest.raises(ValueError):
        Window(3, 2)


# -- q-derivative -----------------------------------------------------------------

@pytest.mark.parametrize("k", [-4, 0, 3, 9])
def test_derivative_of_identity(k):
    assert q_derivative(lambda t: t, k, Q2)[0] == 1.0


def test_derivative_of_square():
    assert q_derivative(lambda t: t * t, QPoint(1), Q2)[0] == 6.0
    # (q+1) t at any isolated point
    assert q_derivative(lambda t: t * t, 3, Q3)[0] == pytest.approx(4 * 27, rel=1e-15)


def test_derivative_at_zero():
    d = q_derivative(lambda t: t * t, ZERO, Q2)
    assert abs(d[0]) < 1e-10
    d = q_derivative(math.exp, ZERO, Q2)
    assert d[0] == pytest.approx(1.0, abs=1e-9)


def test_derivative_at_zero_nonconvergent():
    with pytest.raises(NonConvergent):
        q_derivative(lambda t: math.sqrt(t), ZERO, Q2)
    with pytest.raises(NonConvergent):
        q_derivative(lambda t: math.sin(math.log(t)) if t else 0.0, ZERO, Q2)


def test_derivative_out_of_window():
    g = GridFn.tabulate(lambda k: float(k), Window(0, 3))
    with pytest.raises(OutOfWindow):
        q_derivative(g, 3, Q2)


def test_derivative_on_integer_grid_is_forward_difference():
    assert q_derivative(lambda t: t ** 2, 4, Z)[0] == 9


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(-20, 20))
def test_derivative_linearity_exact_on_tables(a, b, k):
    w = Window(k, k + 1)
    f = GridFn.tabulate(lambda j: math.sin(j), w)
    g = GridFn.tabulate(lambda j: j ** 3 / 7.0, w)
    lhs = q_derivative(f * a + g * b, k, Z)
    rhs = a * q_derivative(f, k, Z) + b * q_derivative(g, k, Z)
    assert lhs[0] == pytest.approx(rhs[0], rel=1e-12, abs=1e-12)


# -- delta integral -------------------------------------------------------------------

def test_integral_examples():
    assert delta_integral(lambda t: 1.0, 0, 2, Q2)[0] == 3.0
    assert delta_integral(lambda t: 1.0, ZERO, 0, Q2)[0] == pytest.approx(1.0, abs=1e-10)
    assert delta_integral(lambda t: t, 0, 2, Q2)[0] == 5.0


def test_integral_from_zero_reports_truncation():
    val, info = delta_integral(lambda t: 1.0, ZERO, 0, Q2, full_output=True)
    # q**(1+m) * sup|f| <= tol
    m = info["truncation_exponent"]
    assert 2.0 ** (1 + m) <= 1e-10
    assert info["tail_bound"] <= 1e-10
    assert abs(val[0] - 1.0) <= info["tail_bound"]


def test_integral_unbounded_near_zero():
    with pytest.raises(NonConvergent):
        delta_integral(lambda t: 1.0 / t ** 2, ZERO, 0, Q2)


def test_integral_empty_and_reversed():
    assert delta_integral(lambda t: t, 3, 3, Q2)[0] == 0.0
    with pytest.raises(ValueError):
        delta_integral(lambda t: t, 3, 1, Q2)


def test_telescoping_exact():
    f = lambda t: t ** 3 - 2 * t
    ts = TimeScale(Fraction(3, 2))
    df = lambda t: q_derivative(f, ts.exponent_of(t), ts)
    val = delta_integral(df, -5, 6, ts)[0]
    exact = f(ts.value(6)) - f(ts.value(-5))
    assert val == pytest.approx(exact, rel=1e-12)


# -- exponential ------------------------------------------------------------------------

def test_exp_examples():
    assert ts_exp(lambda t: 1.0, 3, 0, Z) == 8.0
    assert ts_exp(lambda t: 0.0, 5, -2, Q2) == 1.0
    assert ts_exp(lambda t: 1.0 / t, 3, 0, Q2) == 8.0
    assert ts_exp(lambda t: 1.0 / t, 0, 3, Q2) == 0.125


def test_exp_from_zero():
    # e_p(1, 0) for p = 1 is prod (1 + (q-1) q**n)
    val = ts_exp(lambda t: 1.0, 0, ZERO, Q2)
    prod = 1.0
    for n in range(-200, 0):
        prod *= 1 + 2.0 ** n
    # the Cauchy rule stops once successive partial products agree to tol
    assert val == pytest.approx(prod, rel=1e-10)


def test_exp_not_regressive():
    with pytest.raises(NotRegressive) as info:
        ts_exp(lambda t: -1.0, 3, 0, Z)
    assert info.value.exponent == 0


@given(st.integers(-8, 8), st.integers(-8, 8), st.integers(-8, 8),
       st.floats(1.1, 3.0), st.floats(-0.4, 2.0))
@settings(max_examples=60)
def test_exp_semigroup(t, s, r, q, c):
    ts = TimeScale(q)
    p = lambda x: c / x
    left = ts_exp(p, t, s, ts) * ts_exp(p, s, r, ts)
    assert left == pytest.approx(ts_exp(p, t, r, ts), rel=1e-10)


def test_circle_minus():
    assert circle_minus(1.0, 1.0) == -0.5
    assert circle_minus(0.0, 3.7) == 0.0
    assert circle_minus(1.0, 0.0) == -1.0
    with pytest.raises(NotRegressive):
        circle_minus(-1.0, 1.0)


# -- regressivity ---------------------------------------------------------------------------

def test_regressive_check():
    w = Window(-3, 3)
    rep = regressive_check(lambda t: -1.0 / ((2 - 1) * t), w, Q2)
    assert not rep and rep.failed_at == -3
    assert regressive_check(lambda t: np.zeros((2, 2)), w, Q2)
    assert not regressive_check(lambda t: -1.0, w, Z)


def test_regressive_check_near_singular_matrix():
    A = lambda t: np.array([[-1.0 + 1e-14, 0.0], [0.0, 0.5]])
    rep = regressive_check(A, Window(0, 2), Z)
    assert not rep
    assert rep.worst_condition > 1e12
