"""Calculus on the quantum time scale ``q^Z ∪ {0}`` and on the integer grid.

Points are stored by exponent so that grid membership and the jump
operators are exact; the binary64 value ``q**k`` is only produced when an
operation needs it.  The integer grid ``Z`` (graininess one) is served by the
same functions through :meth:`TimeScale.integer`; there the ``Zero`` point
plays the role of the compactification point ``-inf_q``.

Callables passed as functions here are evaluated at the point *value*
``t`` (``q**k`` on the quantum grid, the integer ``k`` on ``Z``).  Tabulated
functions are :class:`GridFn` instances and are read by exponent.
"""

from __future__ import annotations

import functools
import math
import sys
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Union

import numpy as np

from .errors import NonConvergent, NotRegressive, OutOfWindow, RangeError

__all__ = [
    "QPoint", "ZERO", "TimeScale", "Window", "GridFn",
    "sigma", "rho", "mu", "q_derivative", "delta_integral", "ts_exp",
    "circle_minus", "regressive_check", "RegressivityReport",
    "DEFAULT_TOL", "EXPONENT_BUDGET", "CONDITION_LIMIT",
]

DEFAULT_TOL = 1e-10
EXPONENT_BUDGET = 512
CONDITION_LIMIT = 1e12


@functools.total_ordering
@dataclass(frozen=True)
class QPoint:
    """A point of the time scale: ``Zero`` (``k is None``) or ``Exp(k)`` = q**k."""

    k: int | None = None

    def __post_init__(self):
        if self.k is not None:
            if isinstance(self.k, bool) or int(self.k) != self.k:
                raise TypeError(f"exponent must be an integer, got {self.k!r}")
            object.__setattr__(self, "k", int(self.k))

    @classmethod
    def exp(cls, k: int) -> "QPoint":
        return cls(int(k))

    @property
    def is_zero(self) -> bool:
        return self.k is None

    def _key(self):
        return (0, 0) if self.k is None else (1, self.k)

    def __lt__(self, other: "QPoint") -> bool:
        if not isinstance(other, QPoint):
            return NotImplemented
        return self._key() < other._key()

    def __repr__(self) -> str:
        return "Zero" if self.k is None else f"Exp({self.k})"


ZERO = QPoint()

PointLike = Union[QPoint, int]


def _as_point(p: PointLike) -> QPoint:
    if isinstance(p, QPoint):
        return p
    return QPoint.exp(p)


@functools.lru_cache(maxsize=65536)
def _exact_power(q: Fraction, k: int) -> float:
    return float(q ** k)


@functools.lru_cache(maxsize=65536)
def _exact_mu(q: Fraction, k: int) -> float:
    return float(q ** k * (q - 1))


@dataclass(frozen=True)
class TimeScale:
    """Grid context: the quantum scale with base ``q > 1`` or the integer grid.

    ``q`` may be an int, a :class:`~fractions.Fraction` or a float; powers are
    formed exactly in rational arithmetic and rounded once, so ``value`` is the
    correctly rounded ``q**k``.
    """

    q: Any = None

    def __post_init__(self):
        if self.q is None:
            return
        if isinstance(self.q, bool):
            raise TypeError("q must be a number")
        qf = float(self.q)
        if not math.isfinite(qf) or qf <= 1.0:
            raise ValueError(f"q must be a finite number > 1, got {self.q!r}")

    @classmethod
    def quantum(cls, q) -> "TimeScale":
        return cls(q)

    @classmethod
    def integer(cls) -> "TimeScale":
        return cls(None)

    @property
    def is_integer(self) -> bool:
        return self.q is None

    @functools.cached_property
    def _qfrac(self) -> Fraction:
        return Fraction(self.q)

    @functools.cached_property
    def log_q(self) -> float:
        return math.log(float(self.q))

    @functools.cached_property
    def max_exponent(self) -> int:
        """Largest ``k`` with ``q**k`` finite (unbounded on the integer grid)."""
        if self.is_integer:
            return sys.maxsize
        k = int(math.floor(math.log(sys.float_info.max) / self.log_q))
        while not math.isfinite(self._power(k)):
            k -= 1
        return k

    @functools.cached_property
    def min_exponent(self) -> int:
        """Smallest ``k`` with ``q**k`` a normal binary64 number."""
        if self.is_integer:
            return -sys.maxsize
        k = int(math.ceil(math.log(sys.float_info.min) / self.log_q))
        while self._power(k) < sys.float_info.min:
            k += 1
        return k

    def _power(self, k: int) -> float:
        try:
            return _exact_power(self._qfrac, k)
        except OverflowError:
            return math.inf

    def value(self, p: PointLike):
        """Point value: ``q**k`` (float), ``k`` (int) on ``Z``; 0 for ``Zero``."""
        p = _as_point(p)
        if p.is_zero:
            return -math.inf if self.is_integer else 0.0
        if self.is_integer:
            return p.k
        if not self.min_exponent <= p.k <= self.max_exponent:
            raise RangeError(
                f"q**{p.k} with q={self.q} is outside the binary64 range "
                f"(exponents {self.min_exponent}..{self.max_exponent})")
        return self._power(p.k)

    def mu(self, p: PointLike):
        """Graininess ``(q-1) q**k``; one on ``Z``; zero at ``Zero``."""
        p = _as_point(p)
        if p.is_zero:
            return 0.0
        if self.is_integer:
            return 1
        if p.k + 1 > self.max_exponent:
            raise RangeError(f"graininess at q**{p.k} overflows")
        # exact q**(k+1) - q**k rounded once
        val = self.value(p)
        if val == 0.0:
            raise RangeError(f"graininess at q**{p.k} underflows")
        return _exact_mu(self._qfrac, p.k)

    def exponent_of(self, t: float) -> int:
        """Inverse of :meth:`value` for grid points (raises for off-grid values)."""
        if self.is_integer:
            if int(t) != t:
                raise ValueError(f"{t!r} is not a point of Z")
            return int(t)
        if t <= 0:
            raise ValueError("exponent_of expects a positive grid point")
        k = int(round(math.log(t) / self.log_q))
        if self.value(k) != t:
            for cand in (k - 1, k + 1):
                if self.value(cand) == t:
                    return cand
            if abs(self.value(k) - t) > 1e-12 * t:
                raise ValueError(f"{t!r} is not a point of q^Z for q={self.q}")
        return k

    def __repr__(self) -> str:
        return "TimeScale(Z)" if self.is_integer else f"TimeScale(q={self.q})"


@dataclass(frozen=True)
class Window:
    """Finite exponent range ``kmin..kmax``, optionally together with ``Zero``."""

    kmin: int
    kmax: int
    include_zero: bool = False

    def __post_init__(self):
        if int(self.kmin) != self.kmin or int(self.kmax) != self.kmax:
            raise TypeError("window bounds must be integers")
        object.__setattr__(self, "kmin", int(self.kmin))
        object.__setattr__(self, "kmax", int(self.kmax))
        if self.kmin > self.kmax:
            raise ValueError(f"empty window: kmin={self.kmin} > kmax={self.kmax}")

    def __len__(self) -> int:
        return self.kmax - self.kmin + 1

    def __contains__(self, k) -> bool:
        if isinstance(k, QPoint):
            return self.include_zero if k.is_zero else self.kmin <= k.k <= self.kmax
        return self.kmin <= k <= self.kmax

    @property
    def exponents(self) -> np.ndarray:
        return np.arange(self.kmin, self.kmax + 1)

    def expand(self, below: int = 0, above: int = 0) -> "Window":
        return Window(self.kmin - below, self.kmax + above, self.include_zero)

    def covers(self, other: "Window") -> bool:
        return self.kmin <= other.kmin and other.kmax <= self.kmax


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v)
    if not np.iscomplexobj(arr):
        arr = arr.astype(float)
    return np.atleast_1d(arr)


@dataclass(frozen=True, eq=False)
class GridFn:
    """Vector valued function tabulated on the exponents of a :class:`Window`.

    ``values[i]`` is the value at ``q**(kmin + i)``; ``zero_value`` is the limit
    at ``t = 0`` and is present exactly when ``window.include_zero`` is set.
    Scalar tables are stored as one-component vectors.
    """

    window: Window
    values: np.ndarray
    zero_value: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values)
        if not np.iscomplexobj(vals):
            vals = vals.astype(float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise ValueError("values must be an array of n-vectors")
        if vals.shape[0] != len(self.window):
            raise ValueError(
                f"{vals.shape[0]} values for a window of {len(self.window)} exponents")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.window.include_zero:
            if self.zero_value is None:
                raise ValueError("window includes zero but no zero_value was given")
            zv = np.array(_as_vector(self.zero_value))
            if zv.shape != (vals.shape[1],):
                raise ValueError("zero_value dimension does not match values")
            zv.setflags(write=False)
            object.__setattr__(self, "zero_value", zv)
        elif self.zero_value is not None:
            raise ValueError("zero_value given for a window without zero")

    @classmethod
    def sample(cls, fn: Callable, window: Window, ts: TimeScale, zero=None) -> "GridFn":
        """Tabulate a callable of the point value ``t`` on ``window``."""
        vals = np.array([_as_vector(fn(ts.value(int(k)))) for k in window.exponents])
        zv = None
        if window.include_zero:
            zv = _as_vector(zero if zero is not None else fn(ts.value(ZERO)))
        return cls(window, vals, zv)

    @classmethod
    def tabulate(cls, fn: Callable[[int], Any], window: Window, zero=None) -> "GridFn":
        """Tabulate a callable of the exponent ``k`` on ``window``."""
        vals = np.array([_as_vector(fn(int(k))) for k in window.exponents])
        return cls(window, vals, None if zero is None else _as_vector(zero))

    @classmethod
    def constant(cls, c, window: Window) -> "GridFn":
        c = _as_vector(c)
        vals = np.broadcast_to(c, (len(window), c.size))
        return cls(window, vals, c if window.include_zero else None)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def exponents(self) -> np.ndarray:
        return self.window.exponents

    def at(self, k: PointLike) -> np.ndarray:
        if isinstance(k, QPoint):
            if k.is_zero:
                if self.zero_value is None:
                    raise OutOfWindow("function has no value at zero")
                return self.zero_value
            k = k.k
        if not self.window.kmin <= k <= self.window.kmax:
            raise OutOfWindow(
                f"exponent {k} outside window [{self.window.kmin}, {self.window.kmax}]")
        return self.values[k - self.window.kmin]

    def restrict(self, window: Window) -> "GridFn":
        if not self.window.covers(window):
            raise OutOfWindow(f"{window} is not inside {self.window}")
        lo = window.kmin - self.window.kmin
        zv = None
        if window.include_zero:
            if self.zero_value is None:
                raise OutOfWindow("function has no value at zero")
            zv = self.zero_value
        return GridFn(window, self.values[lo:lo + len(window)], zv)

    def map(self, phi: Callable) -> "GridFn":
        vals = np.array([_as_vector(phi(v)) for v in self.values])
        zv = None if self.zero_value is None else _as_vector(phi(self.zero_value))
        return GridFn(self.window, vals, zv)

    def _binary(self, other, op) -> "GridFn":
        if isinstance(other, GridFn):
            if other.window != self.window:
                raise ValueError("GridFn arithmetic needs identical windows")
            zv = None if self.zero_value is None else op(self.zero_value, other.zero_value)
            return GridFn(self.window, op(self.values, other.values), zv)
        zv = None if self.zero_value is None else op(self.zero_value, other)
        return GridFn(self.window, op(self.values, other), zv)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, c):
        if isinstance(c, GridFn):
            return NotImplemented
        return self._binary(c, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridFn):
            return NotImplemented
        if self.window != other.window or not np.array_equal(self.values, other.values):
            return False
        if self.zero_value is None:
            return other.zero_value is None
        return other.zero_value is not None and np.array_equal(self.zero_value, other.zero_value)

    __hash__ = None


Evaluable = Union[GridFn, Callable]


def _sampler(f: Evaluable, ts: TimeScale) -> Callable[[int], np.ndarray]:
    """Exponent -> vector reader for a GridFn or a callable of ``t``."""
    if isinstance(f, GridFn):
        return f.at

    def read(k: int) -> np.ndarray:
        return _as_vector(f(ts.value(k)))

    return read


def sigma(p: PointLike) -> QPoint:
    """Forward jump: ``Exp(k) -> Exp(k+1)``, ``Zero`` is right dense."""
    p = _as_point(p)
    return p if p.is_zero else QPoint(p.k + 1)


def rho(p: PointLike) -> QPoint:
    """Backward jump: ``Exp(k) -> Exp(k-1)``, ``Zero`` has nothing below it."""
    p = _as_point(p)
    return p if p.is_zero else QPoint(p.k - 1)


def mu(p: PointLike, ts: TimeScale):
    """Graininess ``sigma(t) - t``."""
    return ts.mu(p)


def _difference_quotient(read, k: int, ts: TimeScale) -> np.ndarray:
    if ts.is_integer:
        return read(k + 1) - read(k)
    return (read(k + 1) - read(k)) / ts.mu(k)


def q_derivative(f: Evaluable, p: PointLike, ts: TimeScale, tol: float = DEFAULT_TOL,
                 budget: int = EXPONENT_BUDGET) -> np.ndarray:
    """Delta derivative of ``f`` at ``p``.

    At ``Exp(k)`` this is the exact quotient ``(f(qt) - f(t)) / ((q-1) t)``
    (the forward difference on ``Z``).  At ``Zero`` the quotient is followed
    towards ``n -> -inf`` and accepted once three consecutive values agree
    within ``tol``; callables are probed from ``n = 0`` down through ``budget``
    exponents, tables from the top of their window to the bottom.

    Raises
    ------
    NonConvergent
        If the Cauchy rule is not met within the available exponents.
    OutOfWindow
        If a tabulated ``f`` lacks ``k`` or ``k + 1``.
    """
    p = _as_point(p)
    read = _sampler(f, ts)
    if not p.is_zero:
        return _difference_quotient(read, p.k, ts)
    if ts.is_integer:
        raise ValueError("the derivative at -inf_q is not defined on the integer grid")
    if isinstance(f, GridFn):
        top, bottom = f.window.kmax - 1, f.window.kmin
    else:
        top, bottom = 0, max(-budget, ts.min_exponent)
    history: list[np.ndarray] = []
    for n in range(top, bottom - 1, -1):
        history.append(_difference_quotient(read, n, ts))
        if len(history) >= 3:
            a, b, c = history[-3:]
            if np.linalg.norm(b - a) <= tol and np.linalg.norm(c - b) <= tol:
                return c
    raise NonConvergent(
        f"difference quotient at 0 did not settle within tol={tol} "
        f"(exponents {top}..{bottom})")


def delta_integral(f: Evaluable, a: PointLike, b: PointLike, ts: TimeScale,
                   tol: float = DEFAULT_TOL, budget: int = EXPONENT_BUDGET,
                   full_output: bool = False):
    """Delta integral of ``f`` over ``[a, b)``.

    Between two nonzero points this is the finite sum
    ``sum_{n=i}^{j-1} mu(q**n) f(q**n)``.  From ``a = Zero`` the series is cut
    at the first exponent ``m`` with ``q**(1+m) * S <= tol``, where ``S`` is the
    running sup of ``|f|`` over the exponents summed so far.

    With ``full_output`` a dict with the truncation exponent, the tail bound
    and the number of terms is returned as well.
    """
    a, b = _as_point(a), _as_point(b)
    if b < a:
        raise ValueError(f"integration bounds out of order: {a!r} > {b!r}")
    read = _sampler(f, ts)
    info: dict[str, Any] = {"truncation_exponent": None, "tail_bound": 0.0, "terms": 0}
    if b.is_zero:
        dim = (f.dim if isinstance(f, GridFn) else read(0).size)
        out = np.zeros(dim)
        return (out, info) if full_output else out
    if not a.is_zero:
        terms = [ts.mu(n) * read(n) for n in range(a.k, b.k)]
        info["terms"] = len(terms)
        if not terms:
            out = np.zeros_like(read(b.k)) if not isinstance(f, GridFn) else np.zeros(f.dim)
        else:
            out = np.sum(terms, axis=0)
        return (out, info) if full_output else out
    if ts.is_integer:
        raise ValueError("integrals from -inf_q are not supported on the integer grid")
    if isinstance(f, GridFn):
        bottom = f.window.kmin
    else:
        bottom = max(ts.min_exponent, min(b.k, 0) - budget)
    terms = []
    sup = 0.0
    for m in range(b.k - 1, bottom - 1, -1):
        val = read(m)
        sup = max(sup, float(np.linalg.norm(val)))
        terms.append(ts.mu(m) * val)
        tail = ts.value(m) * float(ts._qfrac) * sup
        if tail <= tol:
            info.update(truncation_exponent=m, tail_bound=tail, terms=len(terms))
            out = np.sum(terms[::-1], axis=0)
            return (out, info) if full_output else out
    raise NonConvergent(
        f"tail of the integral from 0 could not be certified below tol={tol} "
        f"down to exponent {bottom}")


def _factor(pfun: Callable, k: int, ts: TimeScale) -> float:
    mp = ts.mu(k) * pfun(ts.value(k))
    fac = 1.0 + mp
    if fac == 0 or (1.0 + abs(mp)) / abs(fac) > CONDITION_LIMIT:
        raise NotRegressive(f"1 + mu*p vanishes at exponent {k}", exponent=k)
    return fac


def _product(pfun: Callable, lo: int, hi: int, ts: TimeScale) -> float:
    prod = 1.0
    for n in range(lo, hi):
        prod *= _factor(pfun, n, ts)
        if not math.isfinite(prod):
            raise RangeError(f"exponential product overflowed at exponent {n}")
    return prod


def _product_from_zero(pfun: Callable, hi: int, ts: TimeScale, tol: float, budget: int) -> float:
    if ts.is_integer:
        raise ValueError("exponentials anchored at -inf_q are not supported on Z")
    bottom = max(ts.min_exponent, min(hi, 0) - budget)
    prod = 1.0
    history = []
    for n in range(hi - 1, bottom - 1, -1):
        prod *= _factor(pfun, n, ts)
        if not math.isfinite(prod):
            raise RangeError(f"exponential product overflowed at exponent {n}")
        history.append(prod)
        if len(history) >= 3:
            x, y, z = history[-3:]
            if abs(y - x) <= tol * abs(z) and abs(z - y) <= tol * abs(z):
                return z
    raise NonConvergent("infinite product from 0 did not settle")


def ts_exp(pfun: Callable, t: PointLike, s: PointLike, ts: TimeScale,
           tol: float = DEFAULT_TOL, budget: int = EXPONENT_BUDGET) -> float:
    """Time scale exponential ``e_p(t, s)`` as a product of ``1 + mu p``.

    For ``t >= s`` the product runs over ``[s, t)``; for ``t < s`` the
    reciprocal of the product over ``[t, s)`` is returned.  An endpoint at
    ``Zero`` turns the product into an infinite one, accepted by the same
    three-term Cauchy rule (relative) used elsewhere.
    """
    t, s = _as_point(t), _as_point(s)
    if t == s:
        return 1.0
    if s < t:
        if s.is_zero:
            return _product_from_zero(pfun, t.k, ts, tol, budget)
        return _product(pfun, s.k, t.k, ts)
    return 1.0 / ts_exp(pfun, s, t, ts, tol, budget)


def circle_minus(alpha: float, mu_val: float) -> float:
    """``⊖alpha = -alpha / (1 + mu*alpha)``."""
    denom = 1.0 + mu_val * alpha
    if denom == 0:
        raise NotRegressive(f"1 + mu*alpha = 0 for alpha={alpha}, mu={mu_val}")
    return -alpha / denom


@dataclass(frozen=True)
class RegressivityReport:
    """Verdict of :func:`regressive_check`; truthy iff every factor is invertible."""

    ok: bool
    failed_at: int | None
    worst_condition: float

    def __bool__(self) -> bool:
        return self.ok


def one_step_condition(M: np.ndarray, muA: np.ndarray) -> float:
    """Cancellation aware condition of ``M = I + muA``: ``(1 + |muA|) / s_min(M)``."""
    svals = np.linalg.svd(M, compute_uv=False)
    smin = svals[-1]
    if smin == 0 or not np.isfinite(smin):
        return math.inf
    return (1.0 + np.linalg.norm(muA, 2)) / smin


def regressive_check(Afun: Callable, window: Window, ts: TimeScale,
                     limit: float = CONDITION_LIMIT) -> RegressivityReport:
    """Check that ``I + mu(t) A(t)`` is invertible at every nonzero grid point."""
    worst = 0.0
    for k in window.exponents:
        k = int(k)
        A = np.atleast_2d(np.asarray(Afun(ts.value(k))))
        muA = ts.mu(k) * A
        cond = one_step_condition(np.eye(A.shape[0]) + muA, muA)
        worst = max(worst, cond)
        if cond > limit:
            return RegressivityReport(False, k, cond)
    return RegressivityReport(True, None, worst)
