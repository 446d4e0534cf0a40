"""Linear dynamic equations on the quantum scale and on ``Z``.

Two input conventions are accepted and reduced to one internal form,
the one-step recursion ``x(k+1) = C(k) x(k) + w(k)``:

``form="delta"``
    ``x^Δ(t) = A(t) x(t) + f(t)``.  ``A`` and ``f`` take the point value
    ``t`` (``q**k``, or ``k`` on ``Z``) and ``C = I + mu A``, ``w = mu f``.
``form="step"``
    ``x(k+1) = C(k) x(k) + f(k)`` with ``C`` and ``f`` taking the exponent.

Dichotomy constants always refer to the exponent index: a rate ``alpha``
means decay ``(1 + alpha)**-(k - l) = exp(-c (k - l))`` with
``c = log(1 + alpha)``.  Operator norms are spectral norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .errors import (NoDecay, NotRegressive, OutOfWindow, RangeError, SingularX,
                     TailNotCertified, UnitCircleEigenvalue, NonConvergent)
from .qcalc import CONDITION_LIMIT, GridFn, TimeScale, Window, _as_vector, one_step_condition

__all__ = [
    "FundamentalMatrix", "DichotomyData", "DichotomyReport", "fundamental_matrix",
    "dichotomy_verify", "dichotomy_estimate", "spectral_projection",
    "bounded_solution", "solution_bound_check", "residual", "GreenOperator",
    "step_data", "tail_margins", "kernel_envelopes",
]

FORMS = ("delta", "step")


def _check_form(form: str) -> None:
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")


def _as_matrix(a) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a))
    if not np.iscomplexobj(m):
        m = m.astype(float)
    return m


def _step_matrix(A: Callable, k: int, ts: TimeScale, form: str) -> np.ndarray:
    if form == "step":
        C = _as_matrix(A(k))
        if not np.all(np.isfinite(C)):
            raise RangeError(f"one-step matrix is not finite at exponent {k}")
        return C
    Amat = _as_matrix(A(ts.value(k)))
    muA = ts.mu(k) * Amat
    C = np.eye(Amat.shape[0]) + muA
    if not np.all(np.isfinite(C)):
        raise RangeError(f"I + mu A is not finite at exponent {k}")
    return C


def _forcing_reader(f, ts: TimeScale, form: str, dim: int) -> Callable[[int], np.ndarray]:
    """Increment ``w(k)`` of the one-step form for a forcing given in ``form``."""
    if f is None:
        zero = np.zeros(dim)
        return lambda k: zero
    if isinstance(f, GridFn):
        base = f.at
    elif form == "step":
        base = lambda k: _as_vector(f(k))
    else:
        base = lambda k: _as_vector(f(ts.value(k)))
    if form == "step":
        return base
    return lambda k: ts.mu(k) * base(k)


def step_data(A: Callable, f, ks, ts: TimeScale, form: str = "delta"):
    """One-step matrices ``C(k)`` and increments ``w(k)`` for the exponents ``ks``."""
    _check_form(form)
    Cs = np.stack([_step_matrix(A, int(k), ts, form) for k in ks])
    read = _forcing_reader(f, ts, form, Cs.shape[1])
    ws = np.stack([read(int(k)) for k in ks])
    if ws.shape[1] != Cs.shape[1]:
        raise ValueError(f"forcing has dimension {ws.shape[1]}, coefficient {Cs.shape[1]}")
    return Cs, ws


def _check_regressive(C: np.ndarray, k: int) -> None:
    I = np.eye(C.shape[0])
    cond = one_step_condition(C, C - I)
    if cond > CONDITION_LIMIT:
        raise NotRegressive(f"one-step factor is singular at exponent {k} "
                            f"(condition {cond:.3g})", exponent=k)


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """Principal fundamental matrix ``X`` with ``X(t0) = I`` on a window.

    ``X[i]`` and ``Xinv[i]`` belong to exponent ``window.kmin + i``;
    ``C[i]`` is the factor from ``kmin + i`` to ``kmin + i + 1``.
    """

    window: Window
    t0: int
    X: np.ndarray
    Xinv: np.ndarray
    C: np.ndarray
    ts: TimeScale

    def _idx(self, k: int) -> int:
        if not self.window.kmin <= k <= self.window.kmax:
            raise OutOfWindow(f"exponent {k} outside [{self.window.kmin}, {self.window.kmax}]")
        return k - self.window.kmin

    def at(self, k: int) -> np.ndarray:
        return self.X[self._idx(k)]

    def inv(self, k: int) -> np.ndarray:
        return self.Xinv[self._idx(k)]

    def transition(self, k: int, l: int) -> np.ndarray:
        """``X(k) X(l)^{-1}``."""
        return self.at(k) @ self.inv(l)

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def fundamental_matrix(A: Callable, window: Window, t0: int | None = None, *,
                       ts: TimeScale, form: str = "delta") -> FundamentalMatrix:
    """Products of the one-step factors anchored at ``X(t0) = I``.

    Inverses are propagated by their own recursion
    ``X^{-1}(k+1) = X^{-1}(k) C(k)^{-1}`` rather than by inverting ``X``.

    Raises
    ------
    NotRegressive
        A factor fails the relative condition guard.
    RangeError
        A product leaves the binary64 range; the message names the exponent.
    """
    _check_form(form)
    t0 = window.kmin if t0 is None else int(t0)
    if t0 not in window:
        raise OutOfWindow(f"anchor {t0} outside the window")
    ks = window.exponents
    C = np.stack([_step_matrix(A, int(k), ts, form) for k in ks[:-1]]) if len(ks) > 1 else None
    n = _step_matrix(A, int(ks[0]), ts, form).shape[0] if C is None else C.shape[1]
    if C is None:
        C = np.zeros((0, n, n))
    for i, Ck in enumerate(C):
        _check_regressive(Ck, int(ks[i]))
    N = len(ks)
    X = np.empty((N, n, n), dtype=np.result_type(C, float))
    Xinv = np.empty_like(X)
    i0 = t0 - window.kmin
    X[i0] = np.eye(n)
    Xinv[i0] = np.eye(n)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(i0, N - 1):
            X[i + 1] = C[i] @ X[i]
            Xinv[i + 1] = np.linalg.solve(C[i].T, Xinv[i].T).T
            if not (np.all(np.isfinite(X[i + 1])) and np.all(np.isfinite(Xinv[i + 1]))):
                raise RangeError(f"fundamental matrix overflows at exponent {ks[i + 1]}")
        for i in range(i0 - 1, -1, -1):
            X[i] = np.linalg.solve(C[i], X[i + 1])
            Xinv[i] = Xinv[i + 1] @ C[i]
            if not (np.all(np.isfinite(X[i])) and np.all(np.isfinite(Xinv[i]))):
                raise RangeError(f"fundamental matrix overflows at exponent {ks[i]}")
    return FundamentalMatrix(window, t0, X, Xinv, C, ts)


@dataclass(frozen=True, eq=False)
class DichotomyData:
    """Projection ``P`` with constants ``K1, alpha1`` (range of ``P``) and
    ``K2, alpha2`` (kernel of ``P``).

    A part that is trivial on the problem at hand may carry ``K = 0`` with
    ``alpha = inf``; its term then drops out of every bound.
    """

    P: np.ndarray
    K1: float
    K2: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        P = _as_matrix(self.P)
        if P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        scale = max(1.0, float(np.linalg.norm(P, 2)))
        if np.linalg.norm(P @ P - P, 2) > 1e-10 * scale**2:
            raise ValueError("P is not a projection (P @ P != P)")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        for name in ("K1", "K2", "alpha1", "alpha2"):
            v = float(getattr(self, name))
            if math.isnan(v) or v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
            object.__setattr__(self, name, v)
        for K, a, tag in ((self.K1, self.alpha1, "1"), (self.K2, self.alpha2, "2")):
            if a == 0:
                raise ValueError(f"alpha{tag} must be positive")
            if math.isinf(K):
                raise ValueError(f"K{tag} must be finite")

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @property
    def rates(self) -> tuple[float, float]:
        """Index decay rates ``c = log(1 + alpha)``."""
        return math.log1p(self.alpha1), math.log1p(self.alpha2)

    def bound_factor(self) -> float:
        """``(K1 + alpha1)/alpha1 + K2/alpha2``, read as ``1 + K1/alpha1 + K2/alpha2``."""
        return 1.0 + self.K1 / self.alpha1 + self.K2 / self.alpha2


class DichotomyReport(NamedTuple):
    passed: bool
    max_ratio: float
    worst_pair: tuple[int, int] | None
    worst_side: str | None
    pairs_checked: int


def _spectral_norms(M: np.ndarray) -> np.ndarray:
    if M.shape[-1] == 1:
        return np.abs(M[..., 0, 0])
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def _commutes(P: np.ndarray, Cs: np.ndarray, rtol: float = 1e-8) -> bool:
    if len(Cs) == 0:
        return True
    err = np.linalg.norm(P @ Cs - Cs @ P, ord=2, axis=(-2, -1))
    scale = np.maximum(1.0, np.linalg.norm(P, 2) * np.linalg.norm(Cs, ord=2, axis=(-2, -1)))
    return bool(np.all(err <= rtol * scale))


def _kernel_tables(X: FundamentalMatrix, P: np.ndarray):
    """``past[i, j] = |X(k_i) P X^{-1}(k_j)|`` for ``i >= j`` and
    ``future[i, j] = |X(k_i)(I-P) X^{-1}(k_j)|`` for ``j >= i``.

    When ``P`` commutes with every factor the kernels are propagated lag by
    lag and re-projected at each step, ``T <- P C T`` and ``S <- Q C^{-1} S``.
    Forming ``X(k) P X^{-1}(l)`` directly would cancel catastrophically once
    ``|X(k)| |X^{-1}(l)|`` outgrows ``1 / eps``.
    """
    if not (np.all(np.isfinite(X.X)) and np.all(np.isfinite(X.Xinv))):
        raise SingularX("fundamental matrix or its inverse is not finite")
    N = len(X.X)
    Q = np.eye(X.dim) - P
    past = np.full((N, N), np.nan)
    future = np.full((N, N), np.nan)
    if _commutes(P, X.C):
        idx = np.arange(N)
        past[idx, idx] = _spectral_norms(np.broadcast_to(P, (1,) + P.shape))[0]
        future[idx, idx] = _spectral_norms(np.broadcast_to(Q, (1,) + Q.shape))[0]
        Cinv = np.linalg.inv(X.C) if N > 1 else X.C
        T = np.broadcast_to(P, (N,) + P.shape).copy()
        S = np.broadcast_to(Q, (N,) + Q.shape).copy()
        for lag in range(1, N):
            m = N - lag
            # T[j] = X(j + lag) P X^{-1}(j),  S[i] = X(i) Q X^{-1}(i + lag)
            T = P @ (X.C[lag - 1:lag - 1 + m] @ T[:m])
            S = Q @ (Cinv[:m] @ S[1:m + 1])
            past[idx[:m] + lag, idx[:m]] = _spectral_norms(T)
            future[idx[:m], idx[:m] + lag] = _spectral_norms(S)
        return past, future
    for i in range(N):
        left_p = X.X[i] @ P
        left_q = X.X[i] @ Q
        past[i, : i + 1] = _spectral_norms(left_p @ X.Xinv[: i + 1])
        future[i, i:] = _spectral_norms(left_q @ X.Xinv[i:])
    return past, future


def _log_bound(K: float, alpha: float, lo: np.ndarray, hi: np.ndarray,
               X: FundamentalMatrix, form: str) -> np.ndarray:
    """``log(K e_{-alpha}(hi, lo))`` with exponents ``lo <= hi``."""
    if K == 0:
        return np.full(np.broadcast(lo, hi).shape, -np.inf)
    if math.isinf(alpha):
        return np.where(hi == lo, math.log(K), -np.inf)
    if form == "discrete" or X.ts.is_integer:
        return math.log(K) - math.log1p(alpha) * (hi - lo)
    # e_{⊖alpha}(t, s) = prod 1/(1 + mu alpha) over [s, t)
    ks = X.window.exponents
    steps = np.array([math.log1p(X.ts.mu(int(k)) * alpha) for k in ks])
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    return math.log(K) - (cum[hi - X.window.kmin] - cum[lo - X.window.kmin])


def dichotomy_verify(X: FundamentalMatrix, d: DichotomyData, slack: float = 1e-6,
                     form: str = "discrete") -> DichotomyReport:
    """Check both kernel bounds over every ordered pair of the window.

    ``form="discrete"`` uses ``(1 + alpha)**-(k - l)``; ``form="continuous"``
    uses the time scale exponential ``e_{⊖alpha}`` built from the
    graininess.  Ratios ``|kernel| / bound`` are compared in the log
    domain; the check passes iff the largest is at most ``1 + slack``.
    """
    if form not in ("discrete", "continuous"):
        raise ValueError(f"unknown dichotomy form {form!r}")
    if d.dim != X.dim:
        raise ValueError("projection and fundamental matrix dimensions differ")
    past, future = _kernel_tables(X, np.asarray(d.P))
    N = len(X.X)
    kk = X.window.exponents
    I, J = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    best, pair, side = 0.0, None, None
    for name, table, K, a, mask, hi, lo in (
            ("past", past, d.K1, d.alpha1, I >= J, kk[I], kk[J]),
            ("future", future, d.K2, d.alpha2, J >= I, kk[J], kk[I])):
        with np.errstate(divide="ignore"):
            logk = np.log(np.where(mask, table, 1.0))
        bound = _log_bound(K, a, lo, hi, X, form)
        with np.errstate(invalid="ignore"):
            lr = np.where(mask, logk - bound, -np.inf)
        lr = np.where(np.isnan(lr), np.where(np.isneginf(logk), -np.inf, np.inf), lr)
        idx = np.unravel_index(np.argmax(lr), lr.shape)
        r = float(np.exp(lr[idx])) if np.isfinite(lr[idx]) else (0.0 if lr[idx] < 0 else math.inf)
        if pair is None or r > best:
            best = r
            pair = (int(kk[idx[0]]), int(kk[idx[1]]))
            side = name
    return DichotomyReport(best <= 1 + slack, best, pair, side, int(N * (N + 1)))


def _fit_envelope(E: np.ndarray, side: str) -> tuple[float, float]:
    """Fit ``log E(d) <= log K - c d``; return ``(K, alpha)`` with ``alpha = e**c - 1``."""
    d = np.arange(len(E), dtype=float)
    pos = E > 0
    if not pos.any():
        return 0.0, math.inf
    if pos.sum() < 2:
        raise NoDecay(f"{side} envelope has too few nonzero lags to fit a rate")
    slope, _ = np.polyfit(d[pos], np.log(E[pos]), 1)
    c = -slope
    if not c > 0:
        raise NoDecay(f"{side} envelope does not decay (fitted rate {c:.3g})")
    K = float(np.max(E[pos] * np.exp(c * d[pos])))
    return K, math.expm1(c)


def kernel_envelopes(X: FundamentalMatrix, P) -> tuple[np.ndarray, np.ndarray]:
    """``(E1, E2)`` indexed by the lag ``d = 0 .. len(window) - 1``.

    ``E1(d) = max_{k-l=d} |X(k) P X^{-1}(l)|`` and
    ``E2(d) = max_{l-k=d} |X(k)(I-P) X^{-1}(l)|``.
    """
    past, future = _kernel_tables(X, _as_matrix(P))
    N = len(X.X)
    E1 = np.array([np.nanmax(np.diagonal(past, -lag)) for lag in range(N)])
    E2 = np.array([np.nanmax(np.diagonal(future, lag)) for lag in range(N)])
    return E1, E2


def dichotomy_estimate(X: FundamentalMatrix, P) -> DichotomyData:
    """Fit dichotomy constants from the kernel envelopes of ``X``.

    ``E1(d) = max_{k-l=d} |X(k) P X^{-1}(l)|`` and the complementary
    ``E2(d)`` are fitted by least squares in the log domain; ``K`` is then
    raised until ``K e**(-c d)`` bounds the envelope at every lag.  A part
    whose kernel vanishes identically gets ``K = 0`` and ``alpha = inf``.

    Raises
    ------
    NoDecay
        If a fitted rate is not positive.
    """
    P = _as_matrix(P)
    E1, E2 = kernel_envelopes(X, P)
    tiny = 1e-14 * max(1.0, float(E1.max()), float(E2.max()))
    E1 = np.where(E1 <= tiny, 0.0, E1)
    E2 = np.where(E2 <= tiny, 0.0, E2)
    K1, a1 = _fit_envelope(E1, "past")
    K2, a2 = _fit_envelope(E2, "future")
    return DichotomyData(P, K1, K2, a1, a2)


def spectral_projection(C, gap: float = 1e-8) -> np.ndarray:
    """Spectral projection of a constant one-step matrix onto ``|lambda| < 1``.

    An ordered complex Schur form ``C = Z T Z^H`` puts the stable block
    first; the Sylvester equation ``T11 Y - Y T22 = -T12`` decouples the
    blocks and ``P = Z [[I, -Y], [0, 0]] Z^H``.

    Raises
    ------
    UnitCircleEigenvalue
        If some eigenvalue has ``| |lambda| - 1 | < gap``.
    """
    C = _as_matrix(C)
    lam = np.linalg.eigvals(C)
    close = np.abs(np.abs(lam) - 1.0) < gap
    if close.any():
        raise UnitCircleEigenvalue(
            f"eigenvalue {lam[close][0]!r} lies within {gap} of the unit circle")
    n = C.shape[0]
    T, Z, sdim = scipy.linalg.schur(C.astype(complex), output="complex", sort="iuc")
    if sdim == 0:
        P = np.zeros((n, n), dtype=complex)
    elif sdim == n:
        P = np.eye(n, dtype=complex)
    else:
        T11, T12, T22 = T[:sdim, :sdim], T[:sdim, sdim:], T[sdim:, sdim:]
        Y = scipy.linalg.solve_sylvester(T11, -T22, -T12)
        PT = np.zeros((n, n), dtype=complex)
        PT[:sdim, :sdim] = np.eye(sdim)
        PT[:sdim, sdim:] = -Y
        P = Z @ PT @ Z.conj().T
    if np.isrealobj(C):
        P = P.real
    # clean rounding noise on exactly representable entries
    P[np.abs(P) < 1e-15] = 0.0
    return P


def _check_commutes(P: np.ndarray, Cs: np.ndarray, ks) -> None:
    Pn = float(np.linalg.norm(P, 2))
    for k, C in zip(ks, Cs):
        err = np.linalg.norm(P @ C - C @ P, 2)
        if err > 1e-8 * max(1.0, Pn * float(np.linalg.norm(C, 2))):
            raise ValueError(f"projection does not commute with the one-step matrix "
                             f"at exponent {int(k)}")


class GreenOperator:
    """Truncated Green operator on the exponent range ``[lo, hi]``.

    ``apply(ws)`` returns ``x = u - v`` where
    ``u(lo) = 0, u(k+1) = C(k) u(k) + P w(k)`` and
    ``v(hi+1) = 0, v(k) = C(k)^{-1} ((I - P) w(k) + v(k+1))``,
    i.e. the two kernel sums with ``sigma(s)`` mapped to ``l + 1`` and the
    tails beyond the range dropped.  Each step is re-projected onto the range
    of ``P`` (resp. ``I - P``) so that rounding cannot seed the directions the
    recursion amplifies.
    """

    def __init__(self, Cs: np.ndarray, P: np.ndarray, lo: int):
        self.Cs = Cs
        self.lo = lo
        self.hi = lo + len(Cs) - 1
        self.P = P
        self.Q = np.eye(P.shape[0]) - P
        _check_commutes(P, Cs, range(lo, self.hi + 1))
        self.Cinv = np.linalg.inv(Cs)

    def apply(self, ws: np.ndarray) -> np.ndarray:
        N, n = ws.shape
        if N != len(self.Cs):
            raise ValueError("forcing length does not match the operator range")
        dtype = np.result_type(self.Cs, ws, float)
        u = np.zeros((N, n), dtype=dtype)
        v = np.zeros((N + 1, n), dtype=dtype)
        Pw = ws @ self.P.T
        Qw = ws @ self.Q.T
        # re-projecting keeps rounding out of the growing directions
        for i in range(N - 1):
            u[i + 1] = self.P @ (self.Cs[i] @ u[i] + Pw[i])
        for i in range(N - 1, -1, -1):
            v[i] = self.Q @ (self.Cinv[i] @ (Qw[i] + v[i + 1]))
        return u - v[:N]


def _margin(K: float, c: float, W: float, tol: float, offset: int = 0) -> int:
    """Smallest ``M >= 0`` with ``K W e^{-c (M + offset)} / (1 - e^{-c}) <= tol``."""
    if K == 0 or W == 0 or math.isinf(c):
        return 0
    need = math.log(K * W / (-math.expm1(-c) * tol)) / c - offset
    return max(0, math.ceil(need))


def tail_margins(d: DichotomyData, W: float, tol: float, *, ts: TimeScale | None = None,
                 kmin: int = 0, F: float | None = None) -> tuple[int, int]:
    """Past and future margins certifying each Green tail at ``tol / 2``.

    On the quantum scale in delta form the past increments carry the weight
    ``mu(q**l) <= (q-1) q**l``, so ``K1 F q**L`` with ``F = sup |f|`` is an
    alternative bound for the past tail below ``L = kmin - M``.
    """
    c1, c2 = d.rates
    half = tol / 2
    Mp = _margin(d.K1, c1, W, half)
    if (ts is not None and not ts.is_integer and F is not None and d.K1 > 0
            and 0 < F < math.inf):
        L = math.floor(math.log(half / (d.K1 * F)) / ts.log_q)
        Mp = min(Mp, max(0, kmin - L))
    Mf = _margin(d.K2, c2, W, half, offset=2)
    return Mp, Mf


def bounded_solution(A: Callable, f, d: DichotomyData, window: Window, *, ts: TimeScale,
                     form: str = "delta", tol: float = 1e-10, budget: int = 10000,
                     full_output: bool = False):
    """Bounded solution of the forced linear system via the Green kernel.

    ``x(k) = sum_{l<k} X(k) P X^{-1}(l+1) w(l) - sum_{l>=k} X(k)(I-P) X^{-1}(l+1) w(l)``
    with ``w`` the one-step increment (``mu f`` in delta form).  Both tails
    are cut where the dichotomy bound certifies a remainder of at most
    ``tol``; ``sup |w|`` is estimated on the samples and the margins are
    enlarged until that estimate stops growing.

    With ``window.include_zero`` (quantum scale only) the value at ``t = 0``
    is the limit of ``x(q**k)`` as ``k -> -inf``, accepted by the three term
    Cauchy rule.

    Raises
    ------
    TailNotCertified
        If the margins needed exceed ``budget`` exponents on either side.
    """
    _check_form(form)
    if window.include_zero:
        if ts.is_integer:
            raise ValueError("the integer grid has no point zero")
        return _bounded_with_zero(A, f, d, window, ts=ts, form=form, tol=tol,
                                  budget=budget, full_output=full_output)
    lo_bound = -budget if ts.is_integer else max(ts.min_exponent, window.kmin - budget)
    _, ws0 = step_data(A, f, window.exponents, ts, form)
    W = float(np.linalg.norm(ws0, axis=1).max())
    F = _forcing_sup(f, window, ts, form)
    Mp = Mf = 0
    for _ in range(64):
        Mp_new, Mf_new = tail_margins(d, W, tol, ts=ts, kmin=window.kmin, F=F)
        Mp_new, Mf_new = max(Mp, Mp_new), max(Mf, Mf_new)
        if Mp_new > budget or Mf_new > budget:
            raise TailNotCertified(
                f"tails need margins ({Mp_new}, {Mf_new}) beyond the budget {budget}")
        lo = max(window.kmin - Mp_new, lo_bound)
        ks = np.arange(lo, window.kmax + Mf_new + 1)
        try:
            Cs, ws = step_data(A, f, ks, ts, form)
        except (OutOfWindow, RangeError) as exc:
            raise TailNotCertified(f"cannot sample the tails: {exc}") from exc
        W_new = float(np.linalg.norm(ws, axis=1).max())
        F_new = _forcing_sup(f, Window(int(ks[0]), int(ks[-1])), ts, form)
        if not math.isfinite(W_new):
            raise TailNotCertified("forcing increments are not finite on the tails")
        settled = W_new <= W * (1 + 1e-12)
        if F is not None:
            settled = settled and F_new <= F * (1 + 1e-12)
            F_new = max(F, F_new)
        W, F, Mp, Mf = max(W, W_new), F_new, Mp_new, Mf_new
        if settled:
            break
    else:
        raise TailNotCertified("sampled forcing sup keeps growing with the margins")
    d_P = np.asarray(d.P)
    if d_P.shape[0] != Cs.shape[1]:
        raise ValueError("projection and coefficient dimensions differ")
    G = GreenOperator(Cs, d_P, int(ks[0]))
    x = G.apply(ws)
    i0 = window.kmin - int(ks[0])
    out = GridFn(window, x[i0:i0 + len(window)])
    if full_output:
        info = {"margins": (window.kmin - int(ks[0]), Mf), "forcing_sup": W,
                "range": (int(ks[0]), int(ks[-1]))}
        return out, info
    return out


def _forcing_sup(f, window: Window, ts: TimeScale, form: str) -> float | None:
    """``sup |f|`` on the window for the quantum past bound (delta form only)."""
    if form != "delta" or ts.is_integer or f is None:
        return None
    if isinstance(f, GridFn):
        vals = [f.at(int(k)) for k in window.exponents if int(k) in f.window]
    else:
        vals = [_as_vector(f(ts.value(int(k)))) for k in window.exponents]
    return float(max(np.linalg.norm(v) for v in vals)) if vals else 0.0


def _bounded_with_zero(A, f, d, window, *, ts, form, tol, budget, full_output):
    base = Window(window.kmin, window.kmax)
    ext = 8
    while True:
        lo = max(window.kmin - ext, ts.min_exponent + 1)
        res = bounded_solution(A, f, d, Window(lo, window.kmax), ts=ts, form=form,
                               tol=tol, budget=budget, full_output=True)
        x, info = res
        a, b, c = x.values[:3]
        if np.linalg.norm(b - a) <= tol and np.linalg.norm(c - b) <= tol:
            out = GridFn(window, x.restrict(base).values, a)
            return (out, info) if full_output else out
        if lo == ts.min_exponent + 1 or ext >= budget:
            raise NonConvergent("bounded solution has no certified limit at t = 0")
        ext *= 2


def solution_bound_check(x: GridFn, f: GridFn, d: DichotomyData, rtol: float = 1e-12) -> bool:
    """``sup|x| <= ((K1 + alpha1)/alpha1 + K2/alpha2) sup|f|`` up to rounding ``rtol``."""
    from .autom import sup_norm
    return sup_norm(x) <= d.bound_factor() * sup_norm(f) * (1 + rtol)


def residual(x: GridFn, A: Callable, f, window: Window | None = None, *, ts: TimeScale,
             form: str = "delta", weighted: bool = False) -> float:
    """Sup of the equation residual at the points of ``window``.

    Delta form measures ``|(x(k+1) - x(k))/mu - A x - f|``, or its
    ``mu``-weighted sequence side version with ``weighted=True``; step form
    measures ``|x(k+1) - C x(k) - f|``.  The default window drops the last
    point of ``x``, whose right neighbour is not tabulated.
    """
    _check_form(form)
    if window is None:
        if len(x.window) < 2:
            raise OutOfWindow("residual needs at least two samples")
        window = Window(x.window.kmin, x.window.kmax - 1)
    ks = window.exponents
    if int(ks[0]) not in x.window or int(ks[-1]) + 1 not in x.window:
        raise OutOfWindow("x must cover the window plus one right neighbour")
    Cs, ws = step_data(A, f, ks, ts, form)
    X0 = np.stack([x.at(int(k)) for k in ks])
    X1 = np.stack([x.at(int(k) + 1) for k in ks])
    r = X1 - np.einsum("kij,kj->ki", Cs, X0) - ws
    if form == "delta" and not weighted:
        mus = np.array([float(ts.mu(int(k))) for k in ks])
        r = r / mus[:, None]
    return float(np.linalg.norm(r, axis=1).max())
