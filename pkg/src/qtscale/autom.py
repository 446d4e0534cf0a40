"""Desk scale diagnostics for almost automorphy on the quantum scale.

Functions are handled on the exponent side: a callable here takes the
integer exponent ``k`` and returns ``f(q**k)``, and tabulated functions are
:class:`~qtscale.qcalc.GridFn` or :class:`~qtscale.genseq.SeqFn` tables.  The
dilation ``t -> t q**s`` is then the index shift ``k -> k + s``.

Almost automorphy cannot be decided from finite data.  Every verdict below
reads "consistent with almost automorphy at (window, eps, pool)" and nothing
stronger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .errors import ExtractionFailed, NonConvergent, OutOfWindow, RangeError
from .genseq import SeqFn
from .qcalc import GridFn, Window, _as_vector

__all__ = [
    "ShiftSequence", "Extraction", "Extraction2", "AAReport",
    "bochner_extract", "weighted_bochner_extract", "bochner_extract2",
    "return_check", "aa_diagnostic", "sup_norm", "shift", "reflect",
    "compose_scalar", "constant", "periodic", "quasi_periodic", "linear_growth",
    "DEFAULT_EPS", "DEFAULT_POOL", "MIN_LENGTH",
]

DEFAULT_EPS = 1e-6
DEFAULT_POOL = 64
MIN_LENGTH = 3


@dataclass(frozen=True)
class ShiftSequence:
    """Finite candidate shift sequence ``s'_n`` with its provenance."""

    shifts: tuple[int, ...]
    provenance: str = "user"

    def __post_init__(self):
        sh = tuple(int(s) for s in self.shifts)
        if not sh:
            raise ValueError("a shift sequence needs at least one element")
        if self.provenance not in ("user", "pool-generated"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "shifts", sh)

    @classmethod
    def pool(cls, size: int, start: int = 1) -> "ShiftSequence":
        return cls(tuple(range(start, start + size)), "pool-generated")

    def __len__(self) -> int:
        return len(self.shifts)

    def __iter__(self):
        return iter(self.shifts)


def _shifts(shifts) -> ShiftSequence:
    return shifts if isinstance(shifts, ShiftSequence) else ShiftSequence(tuple(shifts))


def _reader(f) -> Callable[[int], np.ndarray]:
    if isinstance(f, (GridFn, SeqFn)):
        return f.at
    return lambda k: _as_vector(f(k))


def _zero_of(f):
    if isinstance(f, GridFn):
        return f.zero_value
    if isinstance(f, SeqFn):
        return f.neg_inf_value
    return None


def _center_out(window: Window) -> list[int]:
    center = (window.kmin + window.kmax) / 2
    return sorted(window.exponents.tolist(), key=lambda k: (abs(k - center), k))


def _weights(shifts: tuple[int, ...], q) -> np.ndarray:
    if q is None:
        return np.ones(len(shifts))
    out = []
    for s in shifts:
        try:
            w = float(q) ** s
        except OverflowError:
            w = math.inf
        if not math.isfinite(w) or w == 0.0:
            raise RangeError(f"weight q**{s} leaves the binary64 range")
        out.append(w)
    return np.array(out)


def _block_dist(V: np.ndarray) -> np.ndarray:
    """Pairwise distances of ``V[m, P, n]``: max over probes of the 2-norm."""
    diff = V[:, None] - V[None, :]
    return np.linalg.norm(diff, axis=-1).max(axis=-1)


def _refine(samples: dict[int, np.ndarray], order: list[int], shifts: tuple[int, ...],
            tol: float, min_length: int) -> list[int]:
    """Greedy diagonal extraction over ``order``; returns surviving shift indices.

    At each point the largest set of survivors lying in a ball of radius
    ``tol/2`` around one survivor is kept.  Ties go to the set holding the
    latest shifts, since the limit is carried by the tail of the sequence.
    """
    alive = list(range(len(shifts)))
    for k in order:
        V = samples[k][alive]
        D = _block_dist(V)
        best_key, best = None, None
        for c in range(len(alive)):
            members = np.nonzero(D[c] <= tol / 2)[0]
            key = (len(members), tuple(sorted(members.tolist(), reverse=True)))
            if best_key is None or key > best_key:
                best_key, best = key, members
        alive = [alive[i] for i in sorted(best.tolist())]
        if len(alive) < min_length:
            raise ExtractionFailed(
                f"only {len(alive)} shift(s) stay within tol={tol} at exponent {k}; "
                f"need {min_length}")
    return alive


class Extraction(NamedTuple):
    """Output of the Bochner extraction.

    ``g`` is the limit table read at the terminal surviving shift,
    ``forward_error`` the sup over the window and the surviving shifts of
    ``|f(t q**s) - g(t)|`` (weighted for Type II) and ``sampled_sup`` the sup of
    ``|f|`` (weighted samples for Type II) over everything that was read.
    """

    subsequence: ShiftSequence
    g: GridFn
    forward_error: float
    sampled_sup: float


class Extraction2(NamedTuple):
    """Two variable extraction: ``g[i, j]`` is the limit at ``window.kmin + i``
    and probe ``probes[j]``."""

    subsequence: ShiftSequence
    g: np.ndarray
    window: Window
    probes: tuple
    forward_error: float


def _collect(read2, window: Window, shifts: tuple[int, ...], weights: np.ndarray):
    samples, sup = {}, 0.0
    for k in window.exponents:
        k = int(k)
        block = np.stack([w * read2(k + s) for s, w in zip(shifts, weights)])
        samples[k] = block
        sup = max(sup, float(np.linalg.norm(block, axis=-1).max()))
        base = read2(k)
        sup = max(sup, float(np.linalg.norm(base, axis=-1).max()))
    return samples, sup


def _extract(read2, shifts: ShiftSequence, window: Window, tol: float, q, min_length: int):
    sh = shifts.shifts
    weights = _weights(sh, q)
    samples, sup = _collect(read2, window, sh, weights)
    alive = _refine(samples, _center_out(window), sh, tol, min_length)
    last = alive[-1]
    table = np.stack([samples[int(k)][last] for k in window.exponents])
    fwd = 0.0
    for k in window.exponents:
        S = samples[int(k)][alive]
        fwd = max(fwd, float(np.linalg.norm(S - samples[int(k)][last], axis=-1).max()))
    sub = ShiftSequence(tuple(sh[i] for i in alive), shifts.provenance)
    return sub, table, fwd, sup


def bochner_extract(f, shifts, window: Window, tol: float = DEFAULT_EPS,
                    min_length: int = MIN_LENGTH) -> Extraction:
    """Extract a subsequence along which ``f(t q**s_n)`` settles on ``window``.

    Window points are processed from the center outward.  The value at zero
    is invariant under dilation, so a tabulated ``f`` carrying one passes it
    to ``g`` unchanged.

    Raises
    ------
    ExtractionFailed
        If fewer than ``min_length`` shifts survive.
    """
    read = _reader(f)
    base = Window(window.kmin, window.kmax)
    sub, table, fwd, sup = _extract(lambda k: read(k)[None, :], _shifts(shifts),
                                    base, tol, None, min_length)
    zv = _zero_of(f) if window.include_zero else None
    if window.include_zero and zv is None:
        raise OutOfWindow("window includes zero but f carries no value there")
    if zv is not None:
        sup = max(sup, float(np.linalg.norm(zv)))
    g = GridFn(window, table[:, 0, :], zv)
    return Extraction(sub, g, fwd, sup)


def weighted_bochner_extract(f, shifts, window: Window, q, tol: float = DEFAULT_EPS,
                             min_length: int = MIN_LENGTH) -> Extraction:
    """Type II extraction on the weighted samples ``q**s f(t q**s)``.

    Raises :class:`~qtscale.errors.RangeError` when a weight ``q**s`` is not
    representable.  A zero value is carried over only when it vanishes, the
    weighted limit at ``t = 0`` being ``lim q**s f(0)``.
    """
    read = _reader(f)
    base = Window(window.kmin, window.kmax)
    sub, table, fwd, sup = _extract(lambda k: read(k)[None, :], _shifts(shifts),
                                    base, tol, q, min_length)
    zv = None
    if window.include_zero:
        zv = _zero_of(f)
        if zv is None or np.any(zv != 0):
            raise NonConvergent("weighted samples at t = 0 have no finite limit")
    return Extraction(sub, GridFn(window, table[:, 0, :], zv), fwd, sup)


def bochner_extract2(f: Callable, shifts, window: Window, probes: Sequence,
                     tol: float = DEFAULT_EPS, q=None,
                     min_length: int = MIN_LENGTH) -> Extraction2:
    """Two variable extraction ``f(t q**s_n, x) -> g(t, x)`` for every probe ``x``.

    Convergence is required simultaneously over the finite probe set; with
    ``q`` given the samples are weighted by ``q**s`` as in the Type II case.
    """
    probes = tuple(probes)
    if not probes:
        raise ValueError("probe set is empty")

    def read2(k):
        return np.stack([_as_vector(f(k, x)) for x in probes])

    base = Window(window.kmin, window.kmax)
    sub, table, fwd, _ = _extract(read2, _shifts(shifts), base, tol, q, min_length)
    return Extraction2(sub, table, base, probes, fwd)


def return_check(f, g, subsequence, window: Window, q=None,
                 terminal: int = MIN_LENGTH) -> float:
    """Sup over ``window`` of ``|w_s g(t q**-s) - f(t)|`` over the terminal shifts.

    ``w_s = q**-s`` for Type II (``q`` given) and one otherwise.  ``g`` must be
    tabulated far enough below the window for ``k - s`` to stay inside; a
    miss raises :class:`~qtscale.errors.OutOfWindow`.
    """
    read_f, read_g = _reader(f), _reader(g)
    sh = _shifts(subsequence).shifts[-terminal:]
    weights = _weights(tuple(-s for s in sh), q)
    err = 0.0
    for k in window.exponents:
        k = int(k)
        fk = read_f(k)
        for s, w in zip(sh, weights):
            err = max(err, float(np.linalg.norm(w * read_g(k - s) - fk)))
    if window.include_zero:
        zf, zg = _zero_of(f), _zero_of(g)
        if zf is not None and zg is not None and q is None:
            err = max(err, float(np.linalg.norm(zg - zf)))
    return err


@dataclass
class AAReport:
    """Result of :func:`aa_diagnostic`."""

    verdict: str
    window: Window
    eps: float
    pool_size: int
    subsequence: tuple[int, ...] | None
    g: GridFn | None
    forward_error: float | None
    return_error: float | None
    covering_numbers: dict[int, int]
    sup_by_pool: dict[int, float]
    note: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "label": (f"{self.verdict} with almost automorphy at window="
                      f"[{self.window.kmin},{self.window.kmax}], eps={self.eps!r}, "
                      f"pool={self.pool_size}"),
            "window": {"kmin": self.window.kmin, "kmax": self.window.kmax,
                       "include_zero": self.window.include_zero},
            "eps": self.eps,
            "pool_size": self.pool_size,
            "subsequence": None if self.subsequence is None else list(self.subsequence),
            "forward_error": self.forward_error,
            "return_error": self.return_error,
            "covering_numbers": {str(p): n for p, n in self.covering_numbers.items()},
            "sup_by_pool": {str(p): s for p, s in self.sup_by_pool.items()},
            "note": self.note,
        }


def _pool_schedule(P: int) -> list[int]:
    sizes, p = [], 1
    while p < P:
        sizes.append(p)
        p *= 2
    sizes.append(P)
    return sizes


def aa_diagnostic(f, pool_size: int = DEFAULT_POOL, window: Window | None = None,
                  eps: float = DEFAULT_EPS, min_length: int = MIN_LENGTH) -> AAReport:
    """Orbit based almost automorphy diagnostic.

    The shifted copies ``f(. q**s)``, ``s = 1..pool_size``, are compared in the
    windowed sup distance.  The verdict is

    * ``unbounded`` when the running sup of the samples sets a new record at
      every pool size in the second half of the pool;
    * ``consistent`` when the greedy ``eps``-net of the first half of the pool
      covers the whole orbit within ``2 eps`` (the orbit looks totally
      bounded at this resolution), a Bochner subsequence of
      the pool is extracted at tolerance ``eps`` on the window widened
      downward by the pool, and the return error on the window is at most
      ``eps``;
    * ``inconsistent`` otherwise.

    ``f`` must be readable on ``[kmin - pool_size, kmax + pool_size]``.
    """
    if window is None:
        raise ValueError("aa_diagnostic needs a window")
    if pool_size < 2:
        raise ValueError("pool_size must be at least 2")
    read = _reader(f)
    P = pool_size
    ks = window.exponents
    copies = np.stack([np.stack([read(int(k) + s) for k in ks]) for s in range(1, P + 1)])
    base = np.stack([read(int(k)) for k in ks])

    norms = np.linalg.norm(copies, axis=-1).max(axis=1)
    running = np.maximum.accumulate(np.maximum(norms, np.linalg.norm(base, axis=-1).max()))
    half = P // 2
    records = running[half:] > running[half - 1:-1]
    schedule = _pool_schedule(P)
    sup_by_pool = {p: float(running[p - 1]) for p in schedule}

    D = np.linalg.norm(copies[:, None] - copies[None, :], axis=-1).max(axis=-1)
    centers: list[int] = []
    counts = []
    for s in range(P):
        if not centers or D[s, centers].min() > eps:
            centers.append(s)
        counts.append(len(centers))
    covering = {p: counts[p - 1] for p in schedule}

    common = dict(window=window, eps=eps, pool_size=P, covering_numbers=covering,
                  sup_by_pool=sup_by_pool)
    if records.all():
        return AAReport("unbounded", subsequence=None, g=None, forward_error=None,
                        return_error=None, note="sampled sup grows across the pool",
                        **common)

    # the eps-net of the first half must cover the whole orbit at 2 eps
    first = [c for c in centers if c < (P + 1) // 2]
    stable = bool(D[:, first].min(axis=1).max() <= 2 * eps)
    note = "" if stable else "orbit not covered by the first-half eps-net at 2 eps"
    wide = Window(window.kmin - P, window.kmax)
    try:
        ext = bochner_extract(f, ShiftSequence.pool(P), wide, tol=eps, min_length=min_length)
    except ExtractionFailed as exc:
        return AAReport("inconsistent", subsequence=None, g=None, forward_error=None,
                        return_error=None, note=str(exc), **common)
    ret = return_check(f, ext.g, ext.subsequence, Window(window.kmin, window.kmax))
    g = ext.g.restrict(Window(window.kmin, window.kmax))
    if window.include_zero:
        zv = _zero_of(f)
        if zv is not None:
            g = GridFn(window, g.values, zv)
    ok = stable and ret <= eps
    if stable and not ok:
        note = f"return error {ret:.3g} exceeds eps"
    return AAReport("consistent" if ok else "inconsistent",
                    subsequence=ext.subsequence.shifts, g=g,
                    forward_error=ext.forward_error, return_error=ret, note=note,
                    extra={"sampled_sup": ext.sampled_sup}, **common)


def sup_norm(f) -> float:
    """Max of the Euclidean norm over the window and the zero value."""
    vals = f.values
    out = float(np.linalg.norm(vals, axis=-1).max()) if vals.size else 0.0
    zv = _zero_of(f)
    if zv is not None:
        out = max(out, float(np.linalg.norm(zv)))
    return out


def shift(f, a: int):
    """``f_a(t) = f(t q**a)``; tables move to the window ``[kmin - a, kmax - a]``."""
    a = int(a)
    if isinstance(f, GridFn):
        w = f.window
        return GridFn(Window(w.kmin - a, w.kmax - a, w.include_zero), f.values, f.zero_value)
    if isinstance(f, SeqFn):
        w = f.window
        return SeqFn(Window(w.kmin - a, w.kmax - a, w.include_zero), f.values, f.neg_inf_value)
    return lambda k: f(k + a)


def _cauchy_tail(values: np.ndarray, tol: float) -> np.ndarray:
    if len(values) < 3:
        raise NonConvergent("need three samples to test the limit")
    a, b, c = values[-3:]
    if np.linalg.norm(b - a) <= tol and np.linalg.norm(c - b) <= tol:
        return c
    raise NonConvergent("f(q**n) does not settle as n grows; f*(0) is undefined")


def reflect(f, tol: float = 1e-10):
    """``f*(t) = f(1/t)``, i.e. ``k -> f(-k)``.

    A table carrying a zero value gets ``f*(0) = lim_{n -> inf} f(q**n)``,
    read off the top of the window by the three term Cauchy rule; failure
    raises :class:`~qtscale.errors.NonConvergent`.
    """
    if isinstance(f, GridFn):
        w = f.window
        zv = _cauchy_tail(f.values, tol) if w.include_zero else None
        return GridFn(Window(-w.kmax, -w.kmin, w.include_zero), f.values[::-1], zv)
    return lambda k: f(-k)


def compose_scalar(phi: Callable, f):
    """Pointwise composition ``phi(f(t))``."""
    if isinstance(f, GridFn):
        return f.map(phi)
    return lambda k: phi(_as_vector(f(k)))


def constant(c) -> Callable[[int], np.ndarray]:
    c = _as_vector(c)
    return lambda k: c


def periodic(pattern: Sequence) -> Callable[[int], np.ndarray]:
    """``f(q**k) = pattern[k mod len(pattern)]``."""
    pat = [_as_vector(v) for v in pattern]
    return lambda k: pat[int(k) % len(pat)]


def quasi_periodic(beta: float = 2 * math.pi * math.sqrt(2), amplitude: float = 1.0,
                   phase: float = 0.0, offset: float = 0.0) -> Callable[[int], np.ndarray]:
    """``f(q**k) = offset + amplitude * cos(beta k + phase)``."""
    return lambda k: np.array([offset + amplitude * math.cos(beta * k + phase)])


def linear_growth(slope: float = 1.0) -> Callable[[int], np.ndarray]:
    return lambda k: np.array([slope * k], dtype=float)
