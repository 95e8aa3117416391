"""The LIM(k, s) one-step method for charged-particle dynamics.

Each step solves for ``s`` block unknowns ``psi_0, ..., psi_{s-1}`` (each in
R^m) satisfying ``F(psi) = 0`` with

    F(psi) = psi - Phat^T diag(bhat) [F_mag(Qhat(psi), Vhat(psi))]
                 + P^T diag(b) grad U(Q(psi))

where ``Qhat``/``Vhat`` are positions/velocities at the s inner Gauss nodes
and ``Q`` are positions at the k outer nodes. The update is then

    q1 = q0 + h p0 + h^2/2 (psi_0 - psi_1 / sqrt(3)),   p1 = p0 + h psi_0.

Arrays of block unknowns are stored as ``(s, m)`` arrays, one row per block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .problems import State, hamiltonian, invariants, magnetic_matrix

__all__ = [
    "SolverConfig",
    "StepReport",
    "RunRecord",
    "ConvergenceError",
    "IntegrationError",
    "SOLVER_KINDS",
    "psi_residual",
    "solve_fixed_point",
    "solve_blended_magnetic",
    "solve_blended_electric",
    "solve",
    "lim_step",
    "integrate",
    "contraction_bound",
]

SOLVER_KINDS = ("fixed_point", "blended_magnetic", "blended_electric")
_INV_SQRT3 = 1.0 / math.sqrt(3.0)


class ConvergenceError(RuntimeError):
    """The nonlinear iteration did not meet its tolerance within ``max_iter``."""

    def __init__(self, message, iterations, residual_norm):
        super().__init__(message)
        self.iterations = iterations
        self.residual_norm = residual_norm


class IntegrationError(RuntimeError):
    """A run aborted; ``step`` is the 1-based index of the failing step."""

    def __init__(self, message, step, t):
        super().__init__(message)
        self.step = step
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "fixed_point"
    tol: float = 1e-14
    max_iter: int = 100
    constant_B: bool = False

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}; choose from {SOLVER_KINDS}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")


@dataclass
class StepReport:
    """Outcome of one nonlinear solve.

    ``residual_norm`` is the max norm of the last increment, which for the
    fixed-point iteration equals ``|F(psi)|`` at the previous iterate.
    """

    iterations: int
    residual_norm: float
    converged: bool
    psi: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class RunRecord:
    t: float
    q: np.ndarray
    p: np.ndarray
    H_err: float
    invariant_errors: dict
    iterations: int


class _StepSystem:
    """Everything about ``F`` that is fixed for one ``(q0, p0, h)``."""

    def __init__(self, tableau, problem, q0, p0, h, B_const=None):
        self.tableau = tableau
        self.problem = problem
        self.q0 = q0
        self.p0 = p0
        self.h = h
        s, n_pos = tableau.s, tableau.s + tableau.k
        self._n_pos = n_pos
        base = np.empty((n_pos + s, q0.shape[0]))
        base[:n_pos] = q0 + h * tableau.stage_nodes[:, None] * p0
        base[n_pos:] = p0
        self.stage_base = base
        stage_map = (h * h) * tableau.stage_map
        stage_map[n_pos:] = h * tableau.Ihat
        self.stage_map = stage_map
        self.B_const = B_const
        self.force, self.grad = problem.kernels()
        if B_const is not None:
            self.hXs = h * tableau.Xs
            self.Bp0 = B_const @ p0

    def rhs(self, psi):
        tab = self.tableau
        s, n_pos = tab.s, self._n_pos
        Z = self.stage_base + self.stage_map @ psi
        if self.B_const is None:
            mag = tab.inner_proj @ self.force(Z[:s], Z[n_pos:])
        else:
            mag = self.hXs @ psi @ self.B_const.T
            mag[0] += self.Bp0
        out = mag - tab.outer_proj @ self.grad(Z[s:n_pos])
        if not math.isfinite(out.sum()):
            raise FloatingPointError("non-finite field evaluation in the stage equations")
        return out


def _as_vectors(q0, p0):
    return np.asarray(q0, dtype=float), np.asarray(p0, dtype=float)


def _initial_psi(tableau, m, psi0):
    if psi0 is None:
        return np.zeros((tableau.s, m))
    psi = np.array(psi0, dtype=float)
    if psi.shape != (tableau.s, m):
        raise ValueError(f"psi must have shape {(tableau.s, m)}, got {psi.shape}")
    return psi


def _constant_matrix(problem, q0, config):
    return magnetic_matrix(problem, q0) if config.constant_B else None


def psi_residual(tableau, problem, q0, p0, h, psi, constant_B=False):
    """Evaluate ``F(psi)``; with ``constant_B`` the magnetic part uses ``B(q0)`` in closed form."""
    q0, p0 = _as_vectors(q0, p0)
    B = magnetic_matrix(problem, q0) if constant_B else None
    psi = _initial_psi(tableau, problem.dim, psi)
    return psi - _StepSystem(tableau, problem, q0, p0, h, B).rhs(psi)


def _converged(step_norm, psi, tol):
    return step_norm <= tol * (1.0 + abs(psi).max())


def _fixed_point(system, psi, config):
    step_norm = np.inf
    for it in range(1, config.max_iter + 1):
        new = system.rhs(psi)
        step_norm = float(abs(new - psi).max())
        psi = new
        if _converged(step_norm, psi, config.tol):
            return psi, StepReport(it, step_norm, True, psi)
    raise ConvergenceError(
        f"fixed-point iteration did not converge in {config.max_iter} iterations "
        f"(last increment {step_norm:.3e}); the step size may be too large",
        config.max_iter,
        step_norm,
    )


def _blended(system, psi, config, theta, weight):
    # weight is rho_s X_s^{-1} (magnetic) or rho_s^2 X_s^{-2} (electric)
    step_norm = np.inf
    thetaT = theta.T
    for it in range(1, config.max_iter + 1):
        b = system.rhs(psi) - psi
        b1 = weight @ b
        delta = (b1 + (b - b1) @ thetaT) @ thetaT
        psi = psi + delta
        step_norm = float(abs(delta).max())
        if _converged(step_norm, psi, config.tol):
            return psi, StepReport(it, step_norm, True, psi)
    raise ConvergenceError(
        f"blended iteration did not converge in {config.max_iter} iterations "
        f"(last increment {step_norm:.3e})",
        config.max_iter,
        step_norm,
    )


def _invert(matrix, what):
    try:
        inv = np.linalg.inv(matrix)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{what} is singular") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(matrix) > 1e14:
        raise np.linalg.LinAlgError(f"{what} is numerically singular")
    return inv


def magnetic_theta(tableau, problem, q0, h):
    """``(I - h rho_s B(q0))^{-1}``."""
    B = magnetic_matrix(problem, q0)
    return _invert(np.eye(problem.dim) - h * tableau.rho_s * B, "I - h rho_s B(q0)")


def electric_theta(tableau, problem, q0, h):
    """``(I + h^2 rho_s^2 hess U(q0))^{-1}``."""
    H = problem.hessian(np.asarray(q0, dtype=float))
    return _invert(
        np.eye(problem.dim) + (h * tableau.rho_s) ** 2 * H,
        "I + h^2 rho_s^2 hess U(q0) (indefinite Hessian; try the fixed_point solver)",
    )


def solve_fixed_point(tableau, problem, q0, p0, h, config=SolverConfig(), psi0=None):
    """Solve ``F(psi) = 0`` by the plain fixed-point iteration ``psi <- psi - F(psi)``.

    Stops when ``|psi_new - psi|_inf <= tol (1 + |psi_new|_inf)``.
    """
    q0, p0 = _as_vectors(q0, p0)
    system = _StepSystem(tableau, problem, q0, p0, h, _constant_matrix(problem, q0, config))
    return _fixed_point(system, _initial_psi(tableau, problem.dim, psi0), config)


def solve_blended_magnetic(tableau, problem, q0, p0, h, config=SolverConfig(kind="blended_magnetic"),
                           psi0=None, theta=None):
    """Blended simplified-Newton iteration preconditioned by the magnetic field.

    Only the ``m x m`` matrix ``Theta = (I - h rho_s B(q0))^{-1}`` is formed.
    A precomputed ``theta`` may be passed (constant-field runs).
    """
    q0, p0 = _as_vectors(q0, p0)
    if theta is None:
        theta = magnetic_theta(tableau, problem, q0, h)
    system = _StepSystem(tableau, problem, q0, p0, h, _constant_matrix(problem, q0, config))
    weight = tableau.rho_s * tableau.Xs_inv
    return _blended(system, _initial_psi(tableau, problem.dim, psi0), config, theta, weight)


def solve_blended_electric(tableau, problem, q0, p0, h, config=SolverConfig(kind="blended_electric"),
                           psi0=None, theta=None):
    """Blended iteration preconditioned by the Hessian of ``U``.

    Meant for problems whose electric field dominates the magnetic one. Uses
    ``hessian_U`` when the problem provides it, else central differences of
    ``grad_U``.
    """
    q0, p0 = _as_vectors(q0, p0)
    if theta is None:
        theta = electric_theta(tableau, problem, q0, h)
    system = _StepSystem(tableau, problem, q0, p0, h, _constant_matrix(problem, q0, config))
    weight = tableau.rho_s**2 * (tableau.Xs_inv @ tableau.Xs_inv)
    return _blended(system, _initial_psi(tableau, problem.dim, psi0), config, theta, weight)


_SOLVERS = {
    "fixed_point": solve_fixed_point,
    "blended_magnetic": solve_blended_magnetic,
    "blended_electric": solve_blended_electric,
}


def solve(tableau, problem, q0, p0, h, config=SolverConfig(), psi0=None, theta=None):
    """Dispatch to the solver named by ``config.kind``."""
    if config.kind == "fixed_point":
        return solve_fixed_point(tableau, problem, q0, p0, h, config, psi0)
    return _SOLVERS[config.kind](tableau, problem, q0, p0, h, config, psi0, theta)


def _advance(state, psi, h):
    q1 = state.q + h * state.p + 0.5 * h * h * (psi[0] - _INV_SQRT3 * psi[1])
    p1 = state.p + h * psi[0]
    return State(state.t + h, q1, p1)


def lim_step(tableau, problem, state, h, config=SolverConfig(), psi0=None, theta=None):
    """Advance ``state`` by one LIM(k, s) step of size ``h`` (may be negative).

    Returns the new state and the solver report; ``report.psi`` holds the
    converged block unknowns for warm-starting the next step.
    """
    if tableau.s < 2:
        raise ValueError("LIM(k, s) needs s >= 2")
    psi, report = solve(tableau, problem, state.q, state.p, h, config, psi0, theta)
    return _advance(state, psi, h), report


class _ThetaCache:
    """Per-run preconditioner; constant when the field is declared uniform."""

    def __init__(self, tableau, problem, h, config):
        self.tableau = tableau
        self.problem = problem
        self.h = h
        self.config = config
        self._const = None

    def __call__(self, q0):
        kind = self.config.kind
        if kind == "fixed_point":
            return None
        if kind == "blended_magnetic" and self.config.constant_B:
            if self._const is None:
                self._const = magnetic_theta(self.tableau, self.problem, q0, self.h)
            return self._const
        if kind == "blended_magnetic":
            return magnetic_theta(self.tableau, self.problem, q0, self.h)
        return electric_theta(self.tableau, self.problem, q0, self.h)


def make_record(problem, state, H0, inv0, iterations):
    inv = invariants(problem, state) if inv0 else {}
    return RunRecord(
        t=state.t,
        q=state.q,
        p=state.p,
        H_err=hamiltonian(problem, state) - H0,
        invariant_errors={name: inv[name] - inv0[name] for name in inv0},
        iterations=iterations,
    )


def run_loop(step, problem, state0, h, n_steps, observers=()):
    """Shared driver: ``step(state) -> (state, iterations)`` applied ``n_steps`` times.

    Times are recomputed as ``t0 + n h`` so the grid does not drift.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be at least 1, got {n_steps}")
    H0 = hamiltonian(problem, state0)
    inv0 = invariants(problem, state0)
    records = [make_record(problem, state0, H0, inv0, 0)]
    for obs in observers:
        obs(records[0])
    state = state0
    for n in range(1, n_steps + 1):
        try:
            new, iters = step(state)
            state = State(state0.t + n * h, new.q, new.p)
        except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise IntegrationError(f"step {n} (t = {state.t:.6g}) failed: {exc}", n, state.t) from exc
        rec = make_record(problem, state, H0, inv0, iters)
        records.append(rec)
        for obs in observers:
            obs(rec)
    return records


def integrate(tableau, problem, state0, h, n_steps, config=SolverConfig(),
              observers: Iterable[Callable] = ()):
    """Apply ``n_steps`` LIM steps from ``state0``.

    Returns ``n_steps + 1`` records (the first is the initial state). Each
    solve is warm-started from the previous step's ``psi``, and the position
    and momentum increments are accumulated with compensated summation.
    Observers are called with every record as it is produced.

    Raises
    ------
    IntegrationError
        On solver failure or a non-finite state, naming the step index.
    """
    thetas = _ThetaCache(tableau, problem, h, config)
    m = problem.dim
    carry = {"psi": None, "cq": np.zeros(m), "cp": np.zeros(m)}

    def step(state):
        psi, report = solve(tableau, problem, state.q, state.p, h, config,
                            carry["psi"], thetas(state.q))
        carry["psi"] = psi
        dq = h * state.p + 0.5 * h * h * (psi[0] - _INV_SQRT3 * psi[1])
        q1, carry["cq"] = _kahan(state.q, dq, carry["cq"])
        p1, carry["cp"] = _kahan(state.p, h * psi[0], carry["cp"])
        return State(state.t + h, q1, p1), report.iterations

    return run_loop(step, problem, state0, h, n_steps, observers)


def _kahan(total, increment, comp):
    y = increment - comp
    new = total + y
    return new, (new - total) - y


def contraction_bound(tableau, h, mu):
    """Left-hand side of the sufficient contraction condition, in max norms.

    The fixed-point iteration is guaranteed to converge when the returned
    value is below 1, ``mu`` being a Lipschitz constant for both ``B(q) p``
    and ``grad U``. Diagnostic only: the condition is sufficient, not necessary.
    """
    def norm(a):
        return np.linalg.norm(a, np.inf)

    inner = norm(tableau.Ihat) * norm(tableau.inner_proj)
    outer = norm(tableau.Imat) * norm(tableau.outer_proj)
    h = abs(h)
    return h * mu * (inner + h * norm(tableau.Xs) * (inner + outer))
