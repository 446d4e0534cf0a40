"""Generalized integers ``Z ∪ {-inf_q}`` and the transform between functions on
the quantum scale and sequences.

A function ``f`` on ``q^Z ∪ {0}`` corresponds to the sequence
``f~(k) = f(q**k)`` with ``f~(-inf_q) = f(0)``.  Windows on both sides are
identified index for index, so the tabulated transform is a relabelling and
round trips are bit exact.

The coefficient transform rewrites the delta equation ``D_q x = B x + g`` as
the difference equation ``Δx~(n) = A(n) x~(n) + f(n, ...)`` with
``A(n) = (q-1) q**n B(q**n)`` and ``f(n, u, v) = (q-1) q**n g(q**n, u, v)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import OutOfWindow
from .qcalc import ZERO, GridFn, QPoint, TimeScale, Window, _as_vector

__all__ = [
    "GenInt", "NEG_INF_Q", "SeqFn", "to_sequence", "from_sequence",
    "to_sequence_fn", "from_sequence_fn", "to_sequence2",
    "QuantumEquation", "DifferenceData", "coeff_transform",
    "inverse_coeff_transform", "EquivalenceReport", "solution_equivalence_check",
]


@functools.total_ordering
@dataclass(frozen=True)
class GenInt:
    """An integer, or the compactification point ``-inf_q`` (``k is None``).

    Arithmetic follows the stipulations ``t ± (-inf_q) = t`` for integers
    ``t``; shifting ``-inf_q`` by an integer leaves it in place, matching
    ``0 * q**a = 0`` on the quantum side.  ``-inf_q ± -inf_q`` is undefined.
    """

    k: int | None

    def __post_init__(self):
        if self.k is not None:
            if isinstance(self.k, bool) or int(self.k) != self.k:
                raise TypeError(f"GenInt needs an integer, got {self.k!r}")
            object.__setattr__(self, "k", int(self.k))

    @property
    def is_neg_inf(self) -> bool:
        return self.k is None

    def _key(self):
        return (0, 0) if self.k is None else (1, self.k)

    def __lt__(self, other) -> bool:
        other = _as_genint(other)
        return self._key() < other._key()

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, np.integer)) and not isinstance(other, bool):
            return self.k is not None and self.k == int(other)
        if not isinstance(other, GenInt):
            return NotImplemented
        return self.k == other.k

    def __hash__(self) -> int:
        return hash(("GenInt", self.k))

    def _combine(self, other, sign: int) -> "GenInt":
        other = _as_genint(other)
        if self.k is None and other.k is None:
            raise ArithmeticError("-inf_q combined with -inf_q is undefined")
        if other.k is None:
            return self
        if self.k is None:
            return self
        return GenInt(self.k + sign * other.k)

    def __add__(self, other) -> "GenInt":
        return self._combine(other, 1)

    def __radd__(self, other) -> "GenInt":
        return _as_genint(other)._combine(self, 1)

    def __sub__(self, other) -> "GenInt":
        return self._combine(other, -1)

    def __rsub__(self, other) -> "GenInt":
        return _as_genint(other)._combine(self, -1)

    def q_power(self, q) -> float:
        """``q**k``, with ``q**(-inf_q) = 0``."""
        return TimeScale(q).value(self.to_point())

    def to_point(self) -> QPoint:
        return ZERO if self.k is None else QPoint(self.k)

    @classmethod
    def from_point(cls, p: QPoint) -> "GenInt":
        return cls(p.k)

    def __repr__(self) -> str:
        return "-inf_q" if self.k is None else f"GenInt({self.k})"


NEG_INF_Q = GenInt(None)


def _as_genint(x) -> GenInt:
    if isinstance(x, GenInt):
        return x
    if isinstance(x, QPoint):
        return GenInt(x.k)
    if isinstance(x, bool):
        raise TypeError("booleans are not generalized integers")
    return GenInt(int(x))


@dataclass(frozen=True, eq=False)
class SeqFn:
    """Sequence side image of a :class:`GridFn`: values on ``kmin..kmax`` plus
    an optional value at ``-inf_q``."""

    window: Window
    values: np.ndarray
    neg_inf_value: np.ndarray | None = None

    def __post_init__(self):
        # reuse the GridFn validation rules
        g = GridFn(self.window, self.values, self.neg_inf_value)
        object.__setattr__(self, "values", g.values)
        object.__setattr__(self, "neg_inf_value", g.zero_value)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, n) -> np.ndarray:
        n = _as_genint(n)
        if n.is_neg_inf:
            if self.neg_inf_value is None:
                raise OutOfWindow("sequence has no value at -inf_q")
            return self.neg_inf_value
        if not self.window.kmin <= n.k <= self.window.kmax:
            raise OutOfWindow(f"index {n.k} outside [{self.window.kmin}, {self.window.kmax}]")
        return self.values[n.k - self.window.kmin]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SeqFn):
            return NotImplemented
        return from_sequence(self) == from_sequence(other)

    __hash__ = None


def to_sequence(f: GridFn) -> SeqFn:
    """``f~(k) = f(q**k)`` on the same window; ``f~(-inf_q) = f(0)``."""
    return SeqFn(f.window, f.values, f.zero_value)


def from_sequence(s: SeqFn) -> GridFn:
    """Exact inverse of :func:`to_sequence`."""
    return GridFn(s.window, s.values, s.neg_inf_value)


def to_sequence_fn(f: Callable, ts: TimeScale) -> Callable:
    """Callable counterpart of :func:`to_sequence`: ``n -> f(q**n)``, ``-inf_q -> f(0)``."""

    def ftilde(n):
        return f(ts.value(_as_genint(n).to_point()))

    return ftilde


def from_sequence_fn(h: Callable, ts: TimeScale) -> Callable:
    """``t -> h(log_q t)`` on ``q^Z`` and ``0 -> h(-inf_q)``."""

    def f(t):
        if t == 0:
            return h(NEG_INF_Q)
        return h(ts.exponent_of(t))

    return f


def to_sequence2(f: Callable, ts: TimeScale) -> Callable:
    """Two argument transform ``(n, x) -> f(q**n, x)``, ``(-inf_q, x) -> f(0, x)``."""

    def ftilde(n, x):
        return f(ts.value(_as_genint(n).to_point()), x)

    return ftilde


@dataclass(frozen=True)
class QuantumEquation:
    """``D_q x(t) = B(t) x(t) + g(t, x(t), x(t q**-delay(k)))`` on ``q^Z``.

    ``B`` and ``g`` take the point value ``t``; ``delay`` maps the exponent
    ``k`` to a nonnegative integer (``None`` for no delay).
    """

    B: Callable
    g: Callable
    delay: Callable[[int], int] | None = None

    @classmethod
    def linear(cls, B: Callable, f: Callable) -> "QuantumEquation":
        return cls(B, lambda t, u, v: f(t))


@dataclass(frozen=True)
class DifferenceData:
    """Sequence side coefficients produced by :func:`coeff_transform`.

    All callables take the integer index ``n`` and feed the integer grid
    solvers in delta form (``Δx = A x + f``).
    """

    ts: TimeScale
    A: Callable[[int], np.ndarray]
    f: Callable | None
    tau: Callable[[int], int] | None

    def A_table(self, window: Window) -> np.ndarray:
        return np.array([self.A(int(n)) for n in window.exponents])


def coeff_transform(Bfun: Callable, gfun: Callable | None = None,
                    delay: Callable[[int], int] | None = None, *,
                    ts: TimeScale) -> DifferenceData:
    """Rewrite quantum side coefficients as difference equation data.

    ``A(n) = (q-1) q**n B(q**n)``, ``f(n, u, v) = (q-1) q**n g(q**n, u, v)`` and
    ``tau(n) = delay(n)``.  Evaluating at ``|n|`` beyond the representable
    exponent range raises :class:`~qtscale.errors.RangeError`.
    """
    if ts.is_integer:
        raise ValueError("coeff_transform maps from a quantum time scale")

    def A(n):
        n = int(n)
        return ts.mu(n) * np.atleast_2d(np.asarray(Bfun(ts.value(n)), dtype=float))

    f = None
    if gfun is not None:
        def f(n, u, v):
            n = int(n)
            return ts.mu(n) * _as_vector(gfun(ts.value(n), u, v))

    tau = None
    if delay is not None:
        def tau(n):
            return int(delay(int(n)))

    return DifferenceData(ts, A, f, tau)


def inverse_coeff_transform(data: DifferenceData) -> Callable[[float], np.ndarray]:
    """Recover ``B(t) = A(log_q t) / ((q-1) t)`` from transformed data."""
    ts = data.ts

    def B(t):
        n = ts.exponent_of(t)
        return data.A(n) / ts.mu(n)

    return B


@dataclass(frozen=True)
class EquivalenceReport:
    """Residuals of a candidate on both sides of the transform.

    ``quantum_residual`` is the sup of the delta equation residual,
    ``sequence_residual`` the sup of the difference equation residual.  A
    point fails on the quantum side when its residual exceeds ``tol`` and on
    the sequence side when it exceeds ``tol * mu(q**k)``; ``consistent`` says
    both sides flag the same points.
    """

    quantum_residual: float
    sequence_residual: float
    quantum_failures: tuple[int, ...]
    sequence_failures: tuple[int, ...]
    weighting_gap: float
    tol: float

    @property
    def consistent(self) -> bool:
        return self.quantum_failures == self.sequence_failures

    @property
    def solves_quantum(self) -> bool:
        return not self.quantum_failures

    @property
    def solves_sequence(self) -> bool:
        return not self.sequence_failures


def solution_equivalence_check(x: GridFn, eq: QuantumEquation, ts: TimeScale,
                               tol: float = 1e-10) -> EquivalenceReport:
    """Evaluate ``x`` against the quantum equation and ``to_sequence(x)``
    against its transformed difference equation.

    Residuals are taken at every exponent ``k`` of the window for which
    ``k + 1`` and the delayed index are also inside it.
    """
    seq = to_sequence(x)
    data = coeff_transform(eq.B, eq.g, eq.delay, ts=ts)
    w = x.window
    rq_norm, rs_norm, gap = 0.0, 0.0, 0.0
    fq, fs = [], []
    for k in range(w.kmin, w.kmax):
        d = 0 if eq.delay is None else int(eq.delay(k))
        if d < 0:
            raise ValueError(f"negative delay {d} at exponent {k}")
        if k - d < w.kmin:
            continue
        t = ts.value(k)
        m = ts.mu(k)
        xk, xk1, xd = x.at(k), x.at(k + 1), x.at(k - d)
        rq = (xk1 - xk) / m - np.atleast_2d(eq.B(t)) @ xk - _as_vector(eq.g(t, xk, xd))
        sk, sk1, sd = seq.at(k), seq.at(k + 1), seq.at(k - d)
        rs = (sk1 - sk) - data.A(k) @ sk - data.f(k, sk, sd)
        nq, ns = float(np.linalg.norm(rq)), float(np.linalg.norm(rs))
        rq_norm, rs_norm = max(rq_norm, nq), max(rs_norm, ns)
        gap = max(gap, float(np.linalg.norm(rs - m * rq)) / max(1.0, m))
        if nq > tol:
            fq.append(k)
        if ns > tol * m:
            fs.append(k)
    return EquivalenceReport(rq_norm, rs_norm, tuple(fq), tuple(fs), gap, tol)
