import math

import numpy as np
import pytest
from scipy.optimize import brentq

from qtscale.autom import aa_diagnostic
from qtscale.errors import MaxIterExceeded, NonContraction, OutOfWindow
from qtscale.lindyn import DichotomyData, bounded_solution
from qtscale.qcalc import GridFn, TimeScale, Window
from qtscale.semlin import (SemilinearProblem, contraction_constant, lipschitz_probe,
                            picard_solve, psi_apply, semilinear_residual, validate_lipschitz)

Z = TimeScale.integer()
STABLE = DichotomyData(np.eye(1), 1.0, 0.0, 1.0, math.inf)
X_STAR = brentq(lambda x: x - (0.5 * x + 0.25 * math.cos(x)), 0.0, 1.0, xtol=1e-15)
BETA = 2 * math.pi * math.sqrt(2)


def bench(window=Window(-10, 10), **kw):
    return SemilinearProblem(lambda k: 0.5, lambda k, u, v: 0.25 * np.cos(u), 0.25, 0.0,
                             STABLE, window, Z, form="step", **kw)


def const_fn(value, window):
    return GridFn.constant(float(value), window)


# -- contraction constant -------------------------------------------------------------------

def test_contraction_constant_examples():
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: u / 8, 1 / 8, 0.0, STABLE,
                          Window(0, 3), Z, form="step")
    assert contraction_constant(p) == 0.25
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: 0.0, 0.0, 0.0, STABLE, Window(0, 3),
                          Z, form="step")
    assert contraction_constant(p) == 0.0
    d = DichotomyData(np.diag([1.0, 0.0]), 1, 1, 1, 1)
    p = SemilinearProblem(lambda k: np.diag([0.5, 2.0]), lambda k, u, v: 0 * u, 0.5, 0.5, d,
                          Window(0, 3), Z, form="step")
    assert contraction_constant(p) == 3.0


def test_problem_validation():
    with pytest.raises(ValueError):
        SemilinearProblem(lambda k: 0.5, lambda k, u, v: u, -1.0, 0.0, STABLE, Window(0, 3), Z)
    with pytest.raises(ValueError):
        SemilinearProblem(lambda k: 0.5, lambda k, u, v: u, 0.0, 0.0, STABLE, Window(0, 3), Z,
                          form="integral")


# -- Psi --------------------------------------------------------------------------------------

def test_psi_zero_nonlinearity():
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: 0.0 * u, 0.0, 0.0, STABLE,
                          Window(-5, 5), Z, form="step")
    y = psi_apply(const_fn(3.0, p.working_window), p)
    assert np.all(y.values == 0.0)


def test_psi_of_zero_benchmark():
    p = bench()
    y = psi_apply(p.zeros(), p)
    assert np.abs(y.restrict(p.window).values - 0.5).max() < 1e-9


def test_psi_linear_matches_lindyn():
    gamma = 0.3
    # derived margins are sized for the fixed point (here 0); an arbitrary x needs its own
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: gamma * u, gamma, 0.0, STABLE,
                          Window(-10, 10), Z, form="step", margin=(60, 1))
    x = GridFn.tabulate(lambda k: math.cos(0.9 * k), p.working_window)
    y = psi_apply(x, p).restrict(p.window)
    ref = bounded_solution(lambda k: 0.5, lambda k: gamma * math.cos(0.9 * k), STABLE, p.window,
                           ts=Z, form="step", tol=1e-12)
    assert np.abs(y.values - ref.values).max() < 1e-8


def test_psi_needs_working_window():
    p = bench()
    with pytest.raises(OutOfWindow):
        psi_apply(const_fn(0.0, p.window), p)


# -- Picard -----------------------------------------------------------------------------------

def test_picard_benchmark():
    p = bench()
    res = picard_solve(p)
    assert res.converged and res.guaranteed and res.c == 0.5
    assert np.abs(res.x.values - X_STAR).max() < 1e-8
    assert all(r <= res.c + 0.05 for r in res.ratios[1:])
    bound = math.ceil(math.log(p.tol) / math.log(res.c)) + 5
    assert res.iterations <= bound
    assert semilinear_residual(res.x_full, p) <= 10 * p.tol


def test_picard_uniqueness():
    p = bench()
    a = picard_solve(p)
    b = picard_solve(p, x0=const_fn(10.0, p.window))
    assert np.abs(a.x.values - b.x.values).max() <= 2 * p.tol


def test_picard_monotone_error():
    p = bench()
    res = picard_solve(p, x0=const_fn(3.0, p.window), keep_iterates=True)
    errs = [float(np.abs(x.restrict(p.window).values - X_STAR).max()) for x in res.iterates]
    for e0, e1 in zip(errs, errs[1:]):
        assert e1 <= res.c * e0 + 1e-9


def test_picard_zero_nonlinearity():
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: 0.0 * u, 0.0, 0.0, STABLE,
                          Window(-5, 5), Z, form="step")
    res = picard_solve(p)
    assert res.iterations == 1 and np.all(res.x.values == 0.0)


def test_picard_with_delay():
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: 0.1 * np.cos(u) + 0.1 * np.sin(v),
                          0.1, 0.1, STABLE, Window(-10, 10), Z, form="step",
                          delay=lambda k: 2 + k % 2)
    assert p.max_delay == 3
    res = picard_solve(p)
    assert res.converged and res.delay_enlargement == 3
    assert p.working_window.kmin == p.forcing_window.kmin - 3
    assert semilinear_residual(res.x_full, p) <= 10 * p.tol


def test_picard_noncontraction():
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: 3 * u + 1, 3.0, 0.0, STABLE,
                          Window(0, 5), Z, form="step")
    with pytest.warns(RuntimeWarning, match="no convergence guarantee"):
        with pytest.raises(NonContraction) as info:
            picard_solve(p)
    assert info.value.result.ratios[-1] > 1


def test_picard_max_iter():
    with pytest.raises(MaxIterExceeded) as info:
        picard_solve(bench(), max_iter=3)
    assert info.value.result.iterations == 3 and not info.value.result.converged


def test_picard_report_table():
    d = picard_solve(bench()).to_dict()
    assert d["table"][0]["ratio"] is None and d["table"][0]["m"] == 1
    assert d["contraction_constant"] == 0.5


def test_quantum_discrete_equivalence():
    q, b = 2.0, -0.5
    ts = TimeScale(q)
    mu = lambda t: (q - 1) * t
    w = Window(-8, 8)
    pq = SemilinearProblem(lambda t: b / mu(t), lambda t, u, v: 0.25 * np.cos(u) / mu(t),
                           0.25, 0.0, STABLE, w, ts, form="delta")
    pz = SemilinearProblem(lambda k: 1 + b, lambda k, u, v: 0.25 * np.cos(u), 0.25, 0.0,
                           STABLE, w, Z, form="step")
    xq, xz = picard_solve(pq).x, picard_solve(pz).x
    assert np.abs(xq.values - xz.values).max() < 1e-8


def test_solution_is_aa_consistent():
    f = lambda k, u, v: 0.25 * np.cos(u) + 0.5 * math.cos(BETA * k)
    p = SemilinearProblem(lambda k: 0.5, f, 0.25, 0.0, STABLE, Window(-160, 80), Z, form="step")
    res = picard_solve(p)
    assert aa_diagnostic(res.x, 64, Window(-10, 10), 0.5).verdict == "consistent"


# -- Lipschitz probes ---------------------------------------------------------------------------

def test_lipschitz_probe_examples():
    grid = np.linspace(-3, 3, 25)
    L1, L2 = lipschitz_probe(lambda t, u, v: 0.25 * np.cos(u), [0], grid, grid)
    assert L1 <= 0.25 and L1 > 0.24 and L2 == 0.0
    assert lipschitz_probe(lambda t, u, v: 1.0, [0, 1], grid, grid) == (0.0, 0.0)
    L1, L2 = lipschitz_probe(lambda t, u, v: 0.5 * v, [0], grid, grid)
    assert L1 == 0.0 and L2 == pytest.approx(0.5)
    with pytest.raises(ValueError):
        lipschitz_probe(lambda t, u, v: u, [0], [], grid)


def test_validate_lipschitz():
    grid = np.linspace(-3, 3, 13)
    assert validate_lipschitz(bench(), grid, grid)[0] <= 0.25
    p = SemilinearProblem(lambda k: 0.5, lambda k, u, v: 0.25 * np.cos(u), 0.1, 0.0, STABLE,
                          Window(0, 3), Z, form="step")
    with pytest.raises(ValueError):
        validate_lipschitz(p, grid, grid)
