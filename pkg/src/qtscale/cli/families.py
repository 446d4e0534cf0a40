"""Parametric coefficient families used by problem specifications.

Every family is evaluated on the exponent ``k`` of the grid:

``const``        ``value``
``qinv_scaled``  ``b / mu(q**k)``, i.e. ``B(t) = b / ((q-1) t)``
``trig_ap``      ``amp * cos(2 pi freq k + phase) + offset`` (optionally ``/ mu``)
``table``        inline values starting at ``kmin``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..errors import OutOfWindow
from ..qcalc import GridFn, TimeScale, Window


class SpecError(ValueError):
    """Semantically invalid problem specification (exit status 2)."""


def _array(v, where: str) -> np.ndarray:
    try:
        a = np.asarray(v, dtype=float)
    except ValueError as exc:
        raise SpecError(f"{where}: ragged numeric array") from exc
    if a.ndim > 2:
        raise SpecError(f"{where}: values must be scalars, vectors or matrices")
    return a


@dataclass(frozen=True)
class Family:
    name: str
    params: dict[str, Any]
    ts: TimeScale
    where: str
    default_kmin: int

    @property
    def table(self) -> np.ndarray | None:
        if self.name != "table":
            return None
        vals = self.params["values"]
        rows = [_array(v, f"{self.where}.params.values[{i}]") for i, v in enumerate(vals)]
        shapes = {r.shape for r in rows}
        if len(shapes) != 1:
            raise SpecError(f"{self.where}.params.values: entries have different shapes {sorted(shapes)}")
        return np.stack(rows)

    @property
    def table_kmin(self) -> int:
        return int(self.params.get("kmin", self.default_kmin))

    def shape(self) -> tuple[int, ...]:
        return np.shape(self.at(self._probe()))

    def _probe(self) -> int:
        return self.table_kmin if self.name == "table" else self.default_kmin

    def at(self, k: int) -> np.ndarray:
        """Value at exponent ``k``."""
        p, ts = self.params, self.ts
        if self.name == "const":
            return _array(p["value"], f"{self.where}.params.value")
        if self.name == "qinv_scaled":
            return _array(p["b"], f"{self.where}.params.b") / float(ts.mu(k))
        if self.name == "trig_ap":
            amp = _array(p.get("amp", 1.0), f"{self.where}.params.amp")
            off = _array(p.get("offset", 0.0), f"{self.where}.params.offset")
            freq = float(p.get("freq", math.sqrt(2.0)))
            val = amp * math.cos(2 * math.pi * freq * k + float(p.get("phase", 0.0))) + off
            if p.get("inv_mu", False):
                val = val / float(ts.mu(k))
            return val
        tab = self.table
        i = k - self.table_kmin
        if not 0 <= i < len(tab):
            raise OutOfWindow(f"{self.where}: table has no value at exponent {k} "
                              f"(covers {self.table_kmin}..{self.table_kmin + len(tab) - 1})")
        return tab[i]

    def zero(self) -> np.ndarray | None:
        """Value at ``t = 0`` when the family defines one."""
        if self.name == "const":
            return self.at(0)
        if self.name == "table" and "zero" in self.params:
            return _array(self.params["zero"], f"{self.where}.params.zero")
        return None

    # adapters ---------------------------------------------------------------

    def of_k(self):
        return self.at

    def of_t(self):
        """Callable of the point value ``t`` (``k`` on ``Z``)."""
        ts = self.ts

        def f(t):
            if t == 0 and not ts.is_integer:
                z = self.zero()
                if z is None:
                    raise SpecError(f"{self.where}: family {self.name!r} has no value at t = 0")
                return z
            return self.at(ts.exponent_of(t))

        return f

    def grid(self, window: Window) -> GridFn:
        """Tabulate on ``window`` (with the zero value when the window holds 0)."""
        vals = np.stack([np.atleast_1d(self.at(int(k))) for k in window.exponents])
        zero = None
        if window.include_zero:
            zero = self.zero()
            if zero is None:
                raise SpecError(f"{self.where}: window includes zero but family "
                                f"{self.name!r} defines no value there")
        return GridFn(window, vals, zero)


def family(spec: dict, ts: TimeScale, where: str, window: Window) -> Family:
    fam = Family(spec["family"], dict(spec.get("params", {})), ts, where, window.kmin)
    if fam.name == "table":
        tab = fam.table
        lo, hi = fam.table_kmin, fam.table_kmin + len(tab) - 1
        if lo > window.kmin or hi < window.kmax:
            raise SpecError(f"{where}.params.values: table covers exponents {lo}..{hi} "
                            f"but the window is {window.kmin}..{window.kmax}")
    return fam


def vector_family(spec: dict, ts, where: str, window: Window, dim: int | None = None) -> Family:
    fam = family(spec, ts, where, window)
    shape = fam.shape()
    if len(shape) > 1:
        raise SpecError(f"{where}: expected scalar or vector values, got shape {shape}")
    n = 1 if not shape else shape[0]
    if dim is not None and n != dim:
        raise SpecError(f"{where}: dimension {n} does not match the coefficient dimension {dim}")
    return fam


def matrix_family(spec: dict, ts, where: str, window: Window) -> tuple[Family, int]:
    fam = family(spec, ts, where, window)
    shape = fam.shape()
    if len(shape) == 1:
        raise SpecError(f"{where}: coefficients must be scalars or square matrices, got a vector")
    if len(shape) == 2 and shape[0] != shape[1]:
        raise SpecError(f"{where}: coefficient matrix is not square ({shape[0]}x{shape[1]})")
    return fam, (1 if not shape else shape[0])
