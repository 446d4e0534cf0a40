"""Semilinear delayed equations and their Picard solver.

The problem is ``x(k+1) = C(k) x(k) + w(k, x(k), x(k - tau(k)))`` in the one
step form of :mod:`qtscale.lindyn`; in delta form ``C = I + mu A`` and
``w = mu g(t, u, v)``.  The Lipschitz constants ``L1, L2`` are those of the
increment ``w`` in ``u`` and ``v``: on ``Z`` (``mu = 1``) and in step form this
is ``g`` itself, on the quantum scale it is ``mu(t) g(t, u, v)``, the
nonlinearity of the transformed difference equation.

``Psi(x)`` is the bounded solution of the linear system forced by
``w(., x, x_tau)``; its fixed point solves the semilinear equation and is
unique when ``c = ((K1 + alpha1)/alpha1 + K2/alpha2)(L1 + L2) < 1``.
"""

from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import MaxIterExceeded, NonContraction, OutOfWindow
from .lindyn import DichotomyData, GreenOperator, _check_form, _step_matrix, tail_margins
from .qcalc import GridFn, TimeScale, Window, _as_vector

__all__ = ["SemilinearProblem", "PicardResult", "contraction_constant", "psi_apply",
           "picard_solve", "lipschitz_probe", "validate_lipschitz", "semilinear_residual"]


@dataclass(frozen=True, eq=False)
class SemilinearProblem:
    """Data of a semilinear delayed problem.

    Parameters
    ----------
    A : callable
        Linear coefficient: ``A(t)`` in delta form, ``C(k)`` in step form.
    g : callable
        Nonlinearity ``g(t, u, v)`` (delta form, ``t`` the point value) or
        ``g(k, u, v)`` (step form).
    L1, L2 : float
        Lipschitz constants of the increment in ``u`` and in ``v``.
    dichotomy : DichotomyData
    window : Window
        Report window.
    ts : TimeScale
    delay : callable, optional
        Nonnegative integer delay ``tau(k)``; ``None`` means no delay.
    form : {"delta", "step"}
    tol : float
        Picard stopping tolerance on successive sup differences.
    margin : tuple of int, optional
        Past and future Green margins; derived from the dichotomy when omitted.
    """

    A: Callable
    g: Callable
    L1: float
    L2: float
    dichotomy: DichotomyData
    window: Window
    ts: TimeScale
    delay: Callable[[int], int] | None = None
    form: str = "delta"
    tol: float = 1e-8
    margin: tuple[int, int] | None = None

    def __post_init__(self):
        _check_form(self.form)
        if self.L1 < 0 or self.L2 < 0:
            raise ValueError("Lipschitz constants must be nonnegative")
        if self.window.include_zero:
            raise ValueError("the semilinear solver works on exponent windows only")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    # -- grids ---------------------------------------------------------------

    def _w(self, k: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.form == "step":
            return _as_vector(self.g(k, u, v))
        return self.ts.mu(k) * _as_vector(self.g(self.ts.value(k), u, v))

    def tau(self, k: int) -> int:
        if self.delay is None:
            return 0
        d = int(self.delay(k))
        if d < 0:
            raise ValueError(f"negative delay {d} at exponent {k}")
        return d

    @functools.cached_property
    def margins(self) -> tuple[int, int]:
        """Green margins ``(past, future)`` around the report window.

        The fixed point obeys ``sup|w(x*)| <= W0 / (1 - c)`` with ``W0`` the
        sup of ``w(., 0, 0)``; the margins certify the tails at ``tol / 10``
        for that bound (``10 W0`` when ``c >= 1``).  The future margin is at
        least one.
        """
        if self.margin is not None:
            return tuple(int(m) for m in self.margin)
        ks = self.window.exponents
        n = self.dichotomy.dim
        z = np.zeros(n)
        W0 = max(float(np.linalg.norm(self._w(int(k), z, z))) for k in ks)
        c = contraction_constant(self)
        W = W0 / (1 - c) if c < 1 else 10 * W0
        W = max(W, self.tol)
        Mp, Mf = tail_margins(self.dichotomy, W, self.tol / 10)
        # keep the right neighbour of the report window for residuals
        return Mp, max(Mf, 1)

    @functools.cached_property
    def forcing_window(self) -> Window:
        Mp, Mf = self.margins
        return Window(self.window.kmin - Mp, self.window.kmax + Mf)

    @functools.cached_property
    def max_delay(self) -> int:
        return max((self.tau(int(k)) for k in self.forcing_window.exponents), default=0)

    @functools.cached_property
    def working_window(self) -> Window:
        F = self.forcing_window
        return Window(F.kmin - self.max_delay, F.kmax)

    @functools.cached_property
    def _green(self) -> GreenOperator:
        E = self.working_window
        Cs = np.stack([_step_matrix(self.A, int(k), self.ts, self.form) for k in E.exponents])
        return GreenOperator(Cs, np.asarray(self.dichotomy.P), E.kmin)

    def zeros(self) -> GridFn:
        return GridFn(self.working_window,
                      np.zeros((len(self.working_window), self.dichotomy.dim)))


def contraction_constant(p: SemilinearProblem) -> float:
    """``c = ((K1 + alpha1)/alpha1 + K2/alpha2) (L1 + L2)``."""
    return p.dichotomy.bound_factor() * (p.L1 + p.L2)


def _full(x: GridFn, p: SemilinearProblem) -> np.ndarray:
    E = p.working_window
    if x.window.kmin > E.kmin or x.window.kmax < E.kmax:
        raise OutOfWindow(f"x must cover the working window [{E.kmin}, {E.kmax}]")
    i0 = E.kmin - x.window.kmin
    return x.values[i0:i0 + len(E)]


def _forcing(X: np.ndarray, p: SemilinearProblem) -> np.ndarray:
    E, F = p.working_window, p.forcing_window
    ws = np.zeros_like(X, dtype=np.result_type(X, float))
    for k in F.exponents:
        k = int(k)
        i = k - E.kmin
        j = i - p.tau(k)
        if j < 0:
            raise OutOfWindow(f"delay at exponent {k} reaches below the working window")
        ws[i] = p._w(k, X[i], X[j])
    return ws


def psi_apply(x: GridFn, p: SemilinearProblem) -> GridFn:
    """``Psi(x)``: the Green solution forced by ``w(l, x(l), x(l - tau(l)))``.

    ``x`` must cover ``p.working_window``; the result lives on it too.  The
    forcing is switched off outside ``p.forcing_window``, which is the tail
    cut certified by the margins.
    """
    X = _full(x, p)
    return GridFn(p.working_window, p._green.apply(_forcing(X, p)))


@dataclass
class PicardResult:
    """Fixed point and iteration history.

    ``x`` is restricted to the report window, ``x_full`` covers the working
    window.  ``diffs[m]`` is ``sup|x_{m+1} - x_m|`` over the working window
    and ``ratios[m] = diffs[m+1] / diffs[m]``.
    """

    x: GridFn
    x_full: GridFn
    iterations: int
    diffs: list[float]
    ratios: list[float]
    c: float
    guaranteed: bool
    margins: tuple[int, int]
    delay_enlargement: int
    converged: bool = True
    iterates: list[GridFn] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "contraction_constant": self.c,
            "guaranteed": self.guaranteed,
            "margins": list(self.margins),
            "delay_enlargement": self.delay_enlargement,
            "table": [{"m": m + 1, "diff": d, "ratio": (self.ratios[m - 1] if m >= 1 else None)}
                      for m, d in enumerate(self.diffs)],
        }


def picard_solve(p: SemilinearProblem, x0: GridFn | None = None, max_iter: int = 200,
                 keep_iterates: bool = False) -> PicardResult:
    """Iterate ``x_{m+1} = Psi(x_m)`` until ``sup|x_{m+1} - x_m| < tol``.

    ``x0`` defaults to zero; a table on a smaller window is padded by its
    nearest edge values.  When ``c >= 1`` a :class:`RuntimeWarning` notes that
    convergence is not guaranteed and the iteration runs anyway.

    Raises
    ------
    NonContraction
        Observed ratios exceed one for three consecutive sweeps.
    MaxIterExceeded
        ``max_iter`` sweeps without reaching ``tol``.
    """
    c = contraction_constant(p)
    guaranteed = c < 1
    if not guaranteed:
        warnings.warn(f"contraction constant c = {c:.4g} >= 1: no convergence guarantee",
                      RuntimeWarning, stacklevel=2)
    x = p.zeros() if x0 is None else _pad(x0, p)
    diffs: list[float] = []
    ratios: list[float] = []
    iterates = [x] if keep_iterates else None
    above = 0

    def result(xc, converged):
        return PicardResult(xc.restrict(p.window), xc, len(diffs), diffs, ratios, c,
                            guaranteed, p.margins, p.max_delay, converged, iterates)

    for _ in range(max_iter):
        nxt = psi_apply(x, p)
        diff = float(np.linalg.norm(nxt.values - x.values, axis=1).max())
        if diffs:
            prev = diffs[-1]
            r = diff / prev if prev > 0 else (0.0 if diff == 0 else math.inf)
            ratios.append(r)
            above = above + 1 if r > 1 else 0
        diffs.append(diff)
        x = nxt
        if keep_iterates:
            iterates.append(x)
        if diff < p.tol:
            return result(x, True)
        if above >= 3:
            raise NonContraction("observed Picard ratio above 1 for 3 consecutive sweeps",
                                 result=result(x, False))
    raise MaxIterExceeded(f"no convergence to tol={p.tol} in {max_iter} sweeps",
                          result=result(x, False))


def _pad(x0: GridFn, p: SemilinearProblem) -> GridFn:
    E = p.working_window
    if x0.window.kmin <= E.kmin and x0.window.kmax >= E.kmax:
        return x0.restrict(E)
    vals = np.stack([x0.at(min(max(int(k), x0.window.kmin), x0.window.kmax))
                     for k in E.exponents])
    return GridFn(E, vals)


def semilinear_residual(x: GridFn, p: SemilinearProblem, window: Window | None = None) -> float:
    """Sup of the equation residual of ``x`` at the points of ``window``.

    Delta form reports ``|D_q x - A x - g|``, step form
    ``|x(k+1) - C x(k) - g|``; ``x`` must hold ``k + 1`` and ``k - tau(k)``.
    """
    window = p.window if window is None else window
    out = 0.0
    for k in window.exponents:
        k = int(k)
        C = _step_matrix(p.A, k, p.ts, p.form)
        xk, xk1, xd = x.at(k), x.at(k + 1), x.at(k - p.tau(k))
        r = xk1 - C @ xk - p._w(k, xk, xd)
        if p.form == "delta":
            r = r / p.ts.mu(k)
        out = max(out, float(np.linalg.norm(r)))
    return out


def lipschitz_probe(g: Callable, t_probes: Iterable, u_probes: Sequence,
                    v_probes: Sequence) -> tuple[float, float]:
    """Lower estimates of ``(L1, L2)`` from difference quotients on probes.

    ``L1`` is the max of ``|g(t,u1,v) - g(t,u2,v)| / |u1 - u2|`` over probe
    pairs with ``v`` fixed, and symmetrically for ``L2``.
    """
    us = [_as_vector(u) for u in u_probes]
    vs = [_as_vector(v) for v in v_probes]
    if not us or not vs:
        raise ValueError("probe set is empty")
    L1 = L2 = 0.0
    for t in t_probes:
        for v in vs:
            vals = [_as_vector(g(t, u, v)) for u in us]
            for (a, ga), (b, gb) in itertools.combinations(zip(us, vals), 2):
                du = float(np.linalg.norm(a - b))
                if du > 0:
                    L1 = max(L1, float(np.linalg.norm(ga - gb)) / du)
        for u in us:
            vals = [_as_vector(g(t, u, v)) for v in vs]
            for (a, ga), (b, gb) in itertools.combinations(zip(vs, vals), 2):
                dv = float(np.linalg.norm(a - b))
                if dv > 0:
                    L2 = max(L2, float(np.linalg.norm(ga - gb)) / dv)
    return L1, L2


def validate_lipschitz(p: SemilinearProblem, u_probes: Sequence, v_probes: Sequence,
                       rtol: float = 1e-9) -> tuple[float, float]:
    """Probe the increment of ``p`` on its report window and check the declared constants.

    Raises :class:`ValueError` when an estimate exceeds the declared value.
    """
    est = lipschitz_probe(p._w, [int(k) for k in p.window.exponents], u_probes, v_probes)
    for name, e, declared in (("L1", est[0], p.L1), ("L2", est[1], p.L2)):
        if e > declared * (1 + rtol) + 1e-300:
            raise ValueError(f"{name} estimate {e:.6g} exceeds declared {declared:.6g}")
    return est
