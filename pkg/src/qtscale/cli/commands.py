"""Command implementations; each takes a :class:`Run` and writes its outputs."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import autom, genseq, lindyn, qcalc, semlin
from ..qcalc import ZERO, GridFn, TimeScale, Window
from .families import Family, SpecError, matrix_family, vector_family

log = logging.getLogger(__name__)

DEFAULT_TOL = {"solve-semilinear": 1e-8}
MAPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "cos": np.cos, "sin": np.sin, "tanh": np.tanh, "linear": lambda x: x,
}


def fmt(x) -> str:
    """Shortest round-trip decimal for a binary64 value."""
    return repr(float(x))


class Run:
    """Resolved context of one command invocation."""

    def __init__(self, command: str, spec: dict, args):
        self.command = command
        self.spec = spec
        self.args = args
        self.out = Path(args.out)
        self.started = time.perf_counter()
        self.ts = self._timescale()
        w = spec["window"]
        if w["kmin"] > w["kmax"]:
            raise SpecError(f"field window: kmin={w['kmin']} exceeds kmax={w['kmax']}")
        self.window = Window(w["kmin"], w["kmax"], w.get("include_zero", False))
        if self.window.include_zero and self.ts.is_integer:
            raise SpecError("field window.include_zero: the integer grid has no point zero")
        tols = spec.get("tolerances", {})
        self.tol = args.tol if args.tol is not None else tols.get(
            "tol", DEFAULT_TOL.get(command, 1e-10))
        self.slack = tols.get("slack", 1e-6)
        self.max_iter = tols.get("max_iter", 200)
        self.budget = tols.get("budget", None)
        self.form = spec.get("form", "delta")
        self.result: dict[str, Any] = {}

    def _timescale(self) -> TimeScale:
        grid = self.spec.get("grid", "quantum")
        q = self.spec.get("q")
        if grid == "integer":
            if q is not None:
                raise SpecError("field q: an integer-grid spec must not set q")
            return TimeScale.integer()
        if q is None:
            raise SpecError("field q: required for the quantum grid")
        return TimeScale(q)

    def need(self, key: str) -> Any:
        if key not in self.spec:
            raise SpecError(f"field {key}: required by command {self.command!r}")
        return self.spec[key]

    # output -----------------------------------------------------------------

    def _path(self, kind: str, default: str) -> Path:
        name = self.spec.get("outputs", {}).get(kind, default)
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def write_csv(self, header: list[str], rows, kind: str = "csv") -> Path:
        suffix = "" if kind == "csv" else f"_{kind}"
        path = self._path(kind, f"{self.command}{suffix}.csv")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        log.info("wrote %s", path)
        return path

    def write_report(self) -> Path:
        report = {
            "command": self.command,
            "parameters": {
                "grid": "integer" if self.ts.is_integer else "quantum",
                "q": None if self.ts.is_integer else float(self.ts.q),
                "window": {"kmin": self.window.kmin, "kmax": self.window.kmax,
                           "include_zero": self.window.include_zero},
                "form": self.form, "tol": self.tol,
            },
            "spec": self.spec,
            "result": self.result,
            "wall_time": time.perf_counter() - self.started,
        }
        path = self._path("report", f"{self.command}.json")
        path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
        log.info("wrote %s", path)
        return path

    # row helpers --------------------------------------------------------------

    def t_of(self, k) -> str:
        if k is ZERO:
            return fmt(0.0)
        return str(k) if self.ts.is_integer else fmt(self.ts.value(int(k)))

    def value_rows(self, g: GridFn) -> tuple[list[str], list[list[str]]]:
        header = ["k", "t"] + [f"x{i}" for i in range(g.dim)]
        rows = []
        if g.zero_value is not None:
            rows.append(["zero", fmt(0.0)] + [fmt(v) for v in g.zero_value])
        for k, v in zip(g.exponents, g.values):
            rows.append([str(int(k)), self.t_of(int(k))] + [fmt(c) for c in v])
        return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# function builders ---------------------------------------------------------

def _fn_family(run: Run, key: str = "function", dim: int | None = None) -> Family:
    return vector_family(run.need(key), run.ts, key, run.window, dim)


def _coefficient(run: Run) -> tuple[Callable, Family, int]:
    fam, n = matrix_family(run.need("coefficient"), run.ts, "coefficient", run.window)
    return (fam.of_k() if run.form == "step" else fam.of_t()), fam, n


def _forcing(run: Run, n: int):
    if "forcing" not in run.spec:
        return None, None
    fam = _fn_family(run, "forcing", n)
    return (fam.of_k() if run.form == "step" else fam.of_t()), fam


def _parse_const(v) -> float:
    return math.inf if v == "inf" else float(v)


def resolve_dichotomy(run: Run, A: Callable, n: int) -> tuple[lindyn.DichotomyData, dict]:
    """Projection and constants from the problem file: inline, spectral or estimated."""
    dspec = run.spec.get("dichotomy", {})
    info: dict[str, Any] = {}
    P = dspec.get("P", "spectral")
    if P == "spectral":
        Cs, _ = lindyn.step_data(A, None, run.window.exponents, run.ts, run.form)
        if np.abs(Cs - Cs[0]).max() > 1e-12 * max(1.0, np.abs(Cs[0]).max()):
            raise SpecError("field dichotomy.P: 'spectral' needs a constant one-step matrix "
                            "on the window; give P inline")
        P = lindyn.spectral_projection(Cs[0])
        info["P_source"] = "spectral"
    else:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape != (n, n):
            raise SpecError(f"field dichotomy.P: shape {P.shape} does not match dimension {n}")
        info["P_source"] = "inline"
    consts = dspec.get("constants", "estimate")
    if consts == "estimate":
        X = lindyn.fundamental_matrix(A, run.window, run.window.kmin, ts=run.ts, form=run.form)
        d = lindyn.dichotomy_estimate(X, P)
        info["constants_source"] = "estimate"
    else:
        d = lindyn.DichotomyData(P, *(_parse_const(consts[k])
                                      for k in ("K1", "K2", "alpha1", "alpha2")))
        info["constants_source"] = "inline"
    info.update({"P": d.P, "K1": d.K1, "K2": d.K2, "alpha1": d.alpha1, "alpha2": d.alpha2,
                 "bound_factor": d.bound_factor()})
    return d, info


# commands -------------------------------------------------------------------

def cmd_deriv(run: Run) -> None:
    fam = _fn_family(run)
    f = fam.grid(Window(fam.table_kmin, fam.table_kmin + len(fam.table) - 1,
                        run.window.include_zero)) if fam.name == "table" else fam.of_t()
    ks = [int(k) for k in run.window.exponents]
    if fam.name == "table":
        ks = [k for k in ks if k + 1 <= f.window.kmax]
    header, rows = None, []
    vals = []
    if run.window.include_zero:
        d0 = qcalc.q_derivative(f, ZERO, run.ts, tol=run.tol)
        vals.append(("zero", d0))
    for k in ks:
        vals.append((k, qcalc.q_derivative(f, k, run.ts, tol=run.tol)))
    n = len(vals[0][1]) if vals else 1
    header = ["k", "t"] + [f"x{i}" for i in range(n)]
    for k, v in vals:
        rows.append([str(k), fmt(0.0) if k == "zero" else run.t_of(k)] + [fmt(c) for c in v])
    run.write_csv(header, rows)
    run.result = {"points": len(rows),
                  "sup_norm": max((float(np.linalg.norm(v)) for _, v in vals), default=0.0)}
    run.write_report()


def cmd_integral(run: Run) -> None:
    fam = _fn_family(run)
    ispec = run.need("integral")
    a = ZERO if ispec["a"] == "zero" else int(ispec["a"])
    b = int(ispec["b"])
    kw = {} if run.budget is None else {"budget": run.budget}
    val, info = qcalc.delta_integral(fam.of_t(), a, b, run.ts, tol=run.tol,
                                     full_output=True, **kw)
    header = ["k", "t"] + [f"x{i}" for i in range(len(val))]
    run.write_csv(header, [[str(b), run.t_of(b)] + [fmt(c) for c in val]])
    run.result = {"a": ispec["a"], "b": b, "value": val, **info}
    run.write_report()


def cmd_exp(run: Run) -> None:
    fam, n = matrix_family(run.need("coefficient"), run.ts, "coefficient", run.window)
    if n != 1:
        raise SpecError("field coefficient: the exponential needs a scalar coefficient")
    p = fam.of_t()
    pfun = lambda t: float(np.asarray(p(t)).reshape(-1)[0])
    s = run.need("exp")["s"]
    s = ZERO if s == "zero" else int(s)
    rows = []
    for k in run.window.exponents:
        e = qcalc.ts_exp(pfun, int(k), s, run.ts, tol=run.tol)
        rows.append([str(int(k)), run.t_of(int(k)), fmt(e)])
    run.write_csv(["k", "t", "x0"], rows)
    run.result = {"points": len(rows), "anchor": run.spec["exp"]["s"]}
    run.write_report()


def cmd_transform(run: Run) -> None:
    if run.ts.is_integer:
        raise SpecError("field q: the transform maps from a quantum grid and needs q")
    if run.args.coeff:
        fam, n = matrix_family(run.need("coefficient"), run.ts, "coefficient", run.window)
        data = genseq.coeff_transform(fam.of_t(), ts=run.ts)
        header = ["n"] + [f"a{i}{j}" for i in range(n) for j in range(n)]
        rows, table = [], []
        for k in run.window.exponents:
            A = data.A(int(k))
            table.append(A)
            rows.append([str(int(k))] + [fmt(c) for c in A.reshape(-1)])
        run.write_csv(header, rows)
        arr = np.stack(table)
        run.result = {"coefficient": {"min": arr.min(), "max": arr.max(),
                                      "constant": bool(np.all(arr == arr[0]))}}
        run.write_report()
        return
    f = _fn_family(run).grid(run.window)
    seq = genseq.to_sequence(f)
    header = ["n"] + [f"x{i}" for i in range(seq.dim)]
    rows = []
    if seq.neg_inf_value is not None:
        rows.append(["-inf_q"] + [fmt(c) for c in seq.neg_inf_value])
    for k, v in zip(seq.window.exponents, seq.values):
        rows.append([str(int(k))] + [fmt(c) for c in v])
    run.write_csv(header, rows)
    run.result = {"points": len(rows)}
    if run.args.inverse:
        back = genseq.from_sequence(seq)
        h, r = run.value_rows(back)
        run.write_csv(h, r, kind="roundtrip")
        run.result["round_trip_bit_exact"] = bool(back == f)
    run.write_report()


def cmd_fundmat(run: Run) -> None:
    A, _, n = _coefficient(run)
    t0 = run.spec.get("t0", run.window.kmin)
    X = lindyn.fundamental_matrix(A, Window(run.window.kmin, run.window.kmax), t0,
                                  ts=run.ts, form=run.form)
    header = ["k", "t"] + [f"x{i}{j}" for i in range(n) for j in range(n)]
    rows = [[str(int(k)), run.t_of(int(k))] + [fmt(c) for c in Xk.reshape(-1)]
            for k, Xk in zip(run.window.exponents, X.X)]
    run.write_csv(header, rows)
    run.result = {"t0": t0, "max_norm": float(np.abs(X.X).max())}
    run.write_report()


def cmd_dichotomy(run: Run) -> None:
    A, _, n = _coefficient(run)
    d, info = resolve_dichotomy(run, A, n)
    win = Window(run.window.kmin, run.window.kmax)
    X = lindyn.fundamental_matrix(A, win, win.kmin, ts=run.ts, form=run.form)
    form = run.spec.get("dichotomy", {}).get("form", "discrete")
    rep = lindyn.dichotomy_verify(X, d, slack=run.slack, form=form)
    E1, E2 = lindyn.kernel_envelopes(X, d.P)
    run.write_csv(["lag", "past", "future"],
                  [[str(i), fmt(a), fmt(b)] for i, (a, b) in enumerate(zip(E1, E2))])
    run.result = {"dichotomy": info, "verify": rep._asdict(), "verify_form": form}
    run.write_report()


def cmd_solve_linear(run: Run) -> None:
    A, _, n = _coefficient(run)
    f, ffam = _forcing(run, n)
    d, info = resolve_dichotomy(run, A, n)
    win = Window(run.window.kmin, run.window.kmax, run.window.include_zero)
    kw = {} if run.budget is None else {"budget": run.budget}
    x, binfo = lindyn.bounded_solution(A, f, d, win, ts=run.ts, form=run.form, tol=run.tol,
                                       full_output=True, **kw)
    header, rows = run.value_rows(x)
    run.write_csv(header, rows)
    base = Window(win.kmin, win.kmax)
    fgrid = ffam.grid(base) if ffam is not None else GridFn(base, np.zeros((len(base), n)))
    res = lindyn.residual(x.restrict(base), A, f, ts=run.ts, form=run.form) \
        if len(base) > 1 else 0.0
    run.result = {"dichotomy": info, "residual": res,
                  "bound_check": lindyn.solution_bound_check(x, fgrid, d),
                  "sup_norm": autom.sup_norm(x), "forcing_sup_norm": autom.sup_norm(fgrid),
                  "margins": binfo["margins"]}
    run.write_report()


def _nonlinearity(run: Run, n: int):
    nl = run.need("nonlinearity")
    parts = []
    for key in ("u", "v"):
        m = nl.get(key, {"map": "linear", "coef": 0.0})
        parts.append((MAPS[m["map"]], float(m.get("coef", 1.0))))
    ff = vector_family(nl["forcing"], run.ts, "nonlinearity.forcing", run.window, n) \
        if "forcing" in nl else None
    inv_mu = nl.get("inv_mu", False)
    quantum_delta = run.form == "delta" and not run.ts.is_integer
    if quantum_delta and not inv_mu:
        raise SpecError("field nonlinearity.inv_mu: quantum delta problems need inv_mu=true "
                        "so that the increment mu*g stays bounded")
    if inv_mu and not quantum_delta:
        raise SpecError("field nonlinearity.inv_mu: only meaningful for quantum delta problems")
    (pu, cu), (pv, cv) = parts
    fk = ff.at if ff is not None else (lambda k: np.zeros(n))
    ts = run.ts

    if run.form == "step":
        def g(k, u, v):
            return cu * pu(u) + cv * pv(v) + fk(k)
    else:
        def g(t, u, v):
            k = ts.exponent_of(t)
            val = cu * pu(u) + cv * pv(v) + fk(k)
            return val / float(ts.mu(k)) if inv_mu else val
    return g, abs(cu), abs(cv)


def cmd_solve_semilinear(run: Run) -> None:
    A, _, n = _coefficient(run)
    g, L1, L2 = _nonlinearity(run, n)
    d, info = resolve_dichotomy(run, A, n)
    delay = run.spec.get("delay", 0)
    prob = semlin.SemilinearProblem(A, g, L1, L2, d, Window(run.window.kmin, run.window.kmax),
                                    run.ts, delay=(lambda k: delay) if delay else None,
                                    form=run.form, tol=run.tol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = semlin.picard_solve(prob, max_iter=run.max_iter)
    header, rows = run.value_rows(res.x)
    run.write_csv(header, rows)
    trace = [[str(m + 1), fmt(df), "" if m == 0 else fmt(res.ratios[m - 1])]
             for m, df in enumerate(res.diffs)]
    run.write_csv(["m", "diff", "ratio"], trace, kind="trace")
    c = res.c
    run.result = {"dichotomy": info, "L1": L1, "L2": L2, "contraction_constant": c,
                  "flag": None if c < 1 else "no guarantee: c >= 1",
                  "residual": semlin.semilinear_residual(res.x_full, prob),
                  **res.to_dict()}
    run.write_report()


def cmd_aa_test(run: Run) -> None:
    fam = _fn_family(run)
    aspec = run.spec.get("aa", {})
    rep = autom.aa_diagnostic(fam.at, aspec.get("pool_size", autom.DEFAULT_POOL),
                              Window(run.window.kmin, run.window.kmax),
                              aspec.get("eps", autom.DEFAULT_EPS))
    if rep.g is not None:
        h, r = run.value_rows(rep.g)
        run.write_csv(h, r)
    run.result = rep.to_dict()
    run.write_report()


COMMANDS: dict[str, tuple[Callable[[Run], None], str]] = {
    "deriv": (cmd_deriv, "q-derivative on the window"),
    "integral": (cmd_integral, "delta integral over [a, b)"),
    "exp": (cmd_exp, "time scale exponential e_p(t, s) on the window"),
    "transform": (cmd_transform, "sequence transform and coefficient transform"),
    "fundmat": (cmd_fundmat, "principal fundamental matrix"),
    "dichotomy": (cmd_dichotomy, "projection, fitted constants and kernel check"),
    "solve-linear": (cmd_solve_linear, "bounded solution of the forced linear system"),
    "solve-semilinear": (cmd_solve_semilinear, "Picard solver for the semilinear problem"),
    "aa-test": (cmd_aa_test, "almost automorphy diagnostic"),
}
