"""Experiment drivers: simulation runs, convergence tables, energy drift, symmetry checks."""

from __future__ import annotations

import csv
import io
import math
import re
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boris import boris_integrate, boris_step
from .legendre import build_tableau
from .lim import IntegrationError, SolverConfig, integrate, lim_step
from .problems import Problem, State, builtin_problem, free_flight

__all__ = [
    "Method",
    "parse_method",
    "RunConfig",
    "resolve_problem",
    "step_count",
    "run",
    "records_to_arrays",
    "write_csv",
    "csv_header",
    "Reference",
    "ReferenceError",
    "generate_reference",
    "solution_error",
    "ConvergenceRow",
    "convergence_table",
    "exact_free_flight_reference",
    "format_convergence_table",
    "write_convergence_csv",
    "drift_series",
    "drift_slope",
    "SymmetryReport",
    "symmetry_check",
]


class ReferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Method:
    name: str
    k: int = 0
    s: int = 0

    @property
    def label(self):
        return "Boris" if self.name == "boris" else f"LIM({self.k},{self.s})"


_LIM_RE = re.compile(r"^lim\(\s*(\d+)\s*,\s*(\d+)\s*\)$", re.IGNORECASE)


def parse_method(text, k=None, s=None):
    """Parse ``boris``, ``lim`` (with ``k``/``s`` given separately) or ``lim(k,s)``.

    A bare ``lim`` without ``k`` uses ``k = 2s``.
    """
    text = text.strip()
    if text.lower() == "boris":
        return Method("boris")
    m = _LIM_RE.match(text)
    if m:
        return Method("lim", int(m.group(1)), int(m.group(2)))
    if text.lower() == "lim":
        if s is None:
            raise ValueError("method 'lim' needs s (and optionally k)")
        return Method("lim", 2 * int(s) if k is None else int(k), int(s))
    raise ValueError(f"unknown method {text!r}; use 'boris', 'lim' or 'lim(k,s)'")


def resolve_problem(name):
    if isinstance(name, Problem):
        return name
    if name == "free":
        return free_flight()
    return builtin_problem(name)


def step_count(t_final, h):
    """Number of steps of size ``h`` covering ``[0, t_final]``; the grid must fit exactly."""
    ratio = t_final / h
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-8 * max(1.0, abs(ratio)):
        raise ValueError(f"t_final / h = {ratio!r} is not a positive integer")
    return n


@dataclass
class RunConfig:
    problem: str = "ex1"
    method: str = "lim"
    s: int = 2
    k: Optional[int] = None
    h: float = 0.01
    t_final: float = 10.0
    solver: str = "fixed_point"
    tol: float = 1e-14
    max_iter: int = 100
    constant_B: bool = False
    record_every: int = 1
    out: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.record_every < 1:
            raise ValueError(f"record_every must be at least 1, got {self.record_every}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        step_count(self.t_final, self.h)

    @property
    def n_steps(self):
        return step_count(self.t_final, self.h)

    def solver_config(self):
        return SolverConfig(self.solver, self.tol, self.max_iter, self.constant_B)

    def method_spec(self):
        return parse_method(self.method, self.k, self.s)


def run(problem, method, state0, h, n_steps, config=SolverConfig(), observers=()):
    """Integrate with Boris or LIM(k, s); returns ``n_steps + 1`` run records."""
    if method.name == "boris":
        return boris_integrate(problem, state0, h, n_steps, observers)
    return integrate(build_tableau(method.k, method.s), problem, state0, h, n_steps, config, observers)


def records_to_arrays(records):
    """``(t, Y, H_err)`` with ``Y[:, :m] = q`` and ``Y[:, m:] = p``."""
    t = np.array([r.t for r in records])
    Y = np.array([np.concatenate([r.q, r.p]) for r in records])
    H = np.array([r.H_err for r in records])
    return t, Y, H


def csv_header(problem):
    m = problem.dim
    cols = ["t"] + [f"q{i}" for i in range(1, m + 1)] + [f"p{i}" for i in range(1, m + 1)]
    cols += ["H_err"] + [f"{name}_err" for name in problem.extra_invariants] + ["iters"]
    return cols


def _fmt(x):
    return f"{x:.16e}"


def write_csv(stream, problem, records, record_every=1):
    """Write run records as CSV (17 significant digits, LF line endings)."""
    if record_every < 1:
        raise ValueError(f"record_every must be at least 1, got {record_every}")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(csv_header(problem))
    last = len(records) - 1
    for i, rec in enumerate(records):
        if i % record_every and i != last:
            continue
        row = [_fmt(rec.t)] + [_fmt(v) for v in rec.q] + [_fmt(v) for v in rec.p]
        row += [_fmt(rec.H_err)] + [_fmt(rec.invariant_errors[n]) for n in problem.extra_invariants]
        row.append(str(rec.iterations))
        writer.writerow(row)


# -- reference solutions -----------------------------------------------------

@dataclass
class Reference:
    """States on the grid ``t0 + j h`` for ``j = 0..n``."""

    h: float
    t: np.ndarray
    Y: np.ndarray
    self_check: float

    def on_grid(self, h):
        """Rows matching a coarser grid whose step is an integer multiple of ``self.h``."""
        stride = h / self.h
        n = int(round(stride))
        if n < 1 or abs(stride - n) > 1e-9 * stride:
            raise ValueError(f"step {h} is not a multiple of the reference grid {self.h}")
        return self.Y[::n]


def generate_reference(problem, t_final, h_grid, state0=None, refine=8, k=12, s=6,
                       check_tol=1e-12, config=SolverConfig()):
    """Reference trajectory on the grid of step ``h_grid``.

    Integrates with LIM(k, s) at ``h_grid / refine`` and again at half that
    step; the two must agree on the grid to ``check_tol`` in max norm.
    """
    state0 = problem.initial_state() if state0 is None else state0
    n_grid = step_count(t_final, h_grid)
    tab = build_tableau(k, s)
    grids = []
    for factor in (refine, 2 * refine):
        try:
            recs = integrate(tab, problem, state0, h_grid / factor, n_grid * factor, config)
        except IntegrationError as exc:
            raise ReferenceError(f"reference integration failed: {exc}") from exc
        t, Y, _ = records_to_arrays(recs)
        grids.append((t[::factor], Y[::factor]))
    diff = float(np.max(np.abs(grids[0][1] - grids[1][1])))
    if not diff < check_tol:
        raise ReferenceError(
            f"reference not converged: halving the step changed it by {diff:.3e} (> {check_tol:.1e})"
        )
    return Reference(h_grid, grids[1][0], grids[1][1], diff)


def solution_error(Y, Y_ref, norm="inf"):
    """Maximum over the grid of the per-point error norm of ``(q, p)``."""
    err = np.asarray(Y) - np.asarray(Y_ref)
    order = {"inf": np.inf, "1": 1, "2": 2}[str(norm)]
    return float(np.max(np.linalg.norm(err, ord=order, axis=1)))


# -- convergence tables ------------------------------------------------------

@dataclass
class ConvergenceRow:
    method: str
    n: int
    h: float
    e_y: float
    rate: Optional[float]
    e_H: float
    rate_H: Optional[float]
    seconds: float


def _rate(prev, cur):
    if prev is None or prev <= 0 or cur <= 0:
        return None
    return math.log2(prev / cur)


def convergence_table(problem, methods: Sequence[Method], h0, ns, t_final, reference=None,
                      norm="inf", config=SolverConfig(), state0=None):
    """Errors and observed rates for each method at ``h = h0 / n``.

    ``reference`` is a ``Reference`` on the finest grid (or a refinement of
    it); when omitted one is generated with ``generate_reference``.
    """
    state0 = problem.initial_state() if state0 is None else state0
    h_min = h0 / max(ns)
    if reference is None:
        reference = generate_reference(problem, t_final, h_min, state0)
    rows = []
    for method in methods:
        prev_y = prev_H = None
        for n in ns:
            h = h0 / n
            start = time.perf_counter()
            recs = run(problem, method, state0, h, step_count(t_final, h), config)
            elapsed = time.perf_counter() - start
            _, Y, H = records_to_arrays(recs)
            e_y = solution_error(Y, reference.on_grid(h), norm)
            e_H = float(np.max(np.abs(H)))
            rows.append(ConvergenceRow(method.label, n, h, e_y, _rate(prev_y, e_y), e_H,
                                       _rate(prev_H, e_H), elapsed))
            prev_y, prev_H = e_y, e_H
    return rows


def exact_free_flight_reference(problem, t_final, h_grid, state0=None):
    """Reference for the field-free problem: straight-line motion."""
    state0 = problem.initial_state() if state0 is None else state0
    n = step_count(t_final, h_grid)
    t = state0.t + h_grid * np.arange(n + 1)
    Y = np.hstack([state0.q + np.outer(t - state0.t, state0.p), np.tile(state0.p, (n + 1, 1))])
    return Reference(h_grid, t, Y, 0.0)


def format_convergence_table(rows):
    def num(x):
        return "---" if x is None else f"{x:.1f}"

    out = io.StringIO()
    out.write(f"{'method':<10} {'n':>4} {'h':>10} {'e_y':>10} {'rate':>5} {'e_H':>10} {'rate':>5} {'sec':>7}\n")
    for r in rows:
        out.write(
            f"{r.method:<10} {r.n:>4} {r.h:>10.3e} {r.e_y:>10.2e} {num(r.rate):>5} "
            f"{r.e_H:>10.2e} {num(r.rate_H):>5} {r.seconds:>7.2f}\n"
        )
    return out.getvalue()


def write_convergence_csv(stream, rows):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["method", "n", "h", "e_y", "rate", "e_H", "rate_H", "seconds"])
    for r in rows:
        writer.writerow([r.method, r.n, _fmt(r.h), _fmt(r.e_y), "" if r.rate is None else f"{r.rate:.4f}",
                         _fmt(r.e_H), "" if r.rate_H is None else f"{r.rate_H:.4f}", f"{r.seconds:.3f}"])


# -- energy drift ------------------------------------------------------------

def drift_series(problem, method, h, t_final, record_every=1, config=SolverConfig(), state0=None):
    """Thinned ``(t, H_err)`` series, always including the final point."""
    state0 = problem.initial_state() if state0 is None else state0
    recs = run(problem, method, state0, h, step_count(t_final, h), config)
    t, _, H = records_to_arrays(recs)
    idx = np.arange(0, len(t), record_every)
    if idx[-1] != len(t) - 1:
        idx = np.append(idx, len(t) - 1)
    return t[idx], H[idx]


def drift_slope(t, H_err):
    """Least-squares slope of ``|H_err|`` against ``t``."""
    return float(np.polyfit(np.asarray(t), np.abs(np.asarray(H_err)), 1)[0])


# -- symmetry ----------------------------------------------------------------

@dataclass
class SymmetryReport:
    method: str
    h: float
    trials: int
    max_error: float
    threshold: float
    errors: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_error <= self.threshold

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: {self.method}, h={self.h:g}, {self.trials} trials, "
                f"max round-trip error {self.max_error:.3e} (threshold {self.threshold:.1e})")


def symmetry_check(problem, method, h, n_trials=20, seed=0, config=SolverConfig(),
                   radius=0.1, state0=None):
    """Forward step with ``h`` then backward with ``-h`` from random nearby states.

    Trial states are drawn uniformly from balls of the given radius around the
    initial position and momentum. Passes when every round trip is within
    ``100 * config.tol`` in max norm.
    """
    rng = np.random.default_rng(seed)
    base = problem.initial_state() if state0 is None else state0
    m = problem.dim
    tab = build_tableau(method.k, method.s) if method.name == "lim" else None

    def ball():
        d = rng.normal(size=m)
        return d * radius * rng.uniform() ** (1.0 / m) / np.linalg.norm(d)

    errors = []
    for _ in range(n_trials):
        st = State(0.0, base.q + ball(), base.p + ball())
        if tab is None:
            back = boris_step(problem, boris_step(problem, st, h), -h)
        else:
            fwd, _ = lim_step(tab, problem, st, h, config)
            back, _ = lim_step(tab, problem, fwd, -h, config)
        errors.append(float(max(np.max(np.abs(back.q - st.q)), np.max(np.abs(back.p - st.p)))))
    return SymmetryReport(method.label, h, n_trials, max(errors), 100 * config.tol, errors)
