"""Charged-particle problems: fields, invariants and the built-in test cases.

Field callables are expected to be vectorized over leading axes: ``grad_U``
maps an ``(..., m)`` array of positions to an ``(..., m)`` array, ``L`` maps
``(..., 3)`` to ``(..., 3)``, ``B`` maps ``(..., m)`` to ``(..., m, m)``.
Set ``vectorized=False`` on the problem to have them applied row by row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np

__all__ = [
    "CrossField",
    "MatrixField",
    "Problem",
    "State",
    "ProblemValidationError",
    "apply_magnetic",
    "magnetic_matrix",
    "hamiltonian",
    "invariants",
    "builtin_problem",
    "BUILTIN_PROBLEMS",
    "validate_problem",
    "fd_hessian",
    "free_flight",
]

P_CROSS_L = "p_cross_L"
L_CROSS_P = "L_cross_p"


class ProblemValidationError(ValueError):
    pass


_ROT1 = np.array([1, 2, 0])
_ROT2 = np.array([2, 0, 1])


def _cross(a, b):
    # np.cross carries a large fixed overhead for tiny arrays.
    a = np.asarray(a)
    b = np.asarray(b)
    return a.take(_ROT1, -1) * b.take(_ROT2, -1) - a.take(_ROT2, -1) * b.take(_ROT1, -1)


def _skew(w):
    """Matrix ``S`` with ``S @ x = w x x``."""
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


@dataclass(frozen=True)
class CrossField:
    """Magnetic field given as a vector ``L(q)`` in R^3.

    ``orientation`` selects the force: ``"p_cross_L"`` gives ``p x L(q)``,
    ``"L_cross_p"`` gives ``L(q) x p``, which is ``B(q) p`` for the usual
    skew matrix ``B`` with ``B[0, 1] = -l_3``, ``B[0, 2] = l_2``, ...
    """

    L: Callable
    orientation: str = P_CROSS_L
    uniform: bool = False

    def __post_init__(self):
        if self.orientation not in (P_CROSS_L, L_CROSS_P):
            raise ValueError(f"unknown orientation {self.orientation!r}")

    @property
    def sign(self):
        return 1.0 if self.orientation == P_CROSS_L else -1.0

    def rotation_vector(self, q):
        """Vector ``w(q)`` such that the magnetic force equals ``p x w(q)``."""
        return self.sign * np.asarray(self.L(q), dtype=float)


@dataclass(frozen=True)
class MatrixField:
    """Magnetic term given as a skew-symmetric matrix, force ``B(q) @ p``."""

    B: Callable
    uniform: bool = False


Magnetic = Union[CrossField, MatrixField]


@dataclass(frozen=True)
class State:
    t: float
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        p = np.array(self.p, dtype=float)
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError(f"q and p must be vectors of equal length, got {q.shape} and {p.shape}")
        # cheap check first; a finite sum implies finite terms
        if not math.isfinite(self.t + float(q.sum()) + float(p.sum())) and not (
                math.isfinite(self.t) and np.isfinite(q).all() and np.isfinite(p).all()):
            raise FloatingPointError(f"non-finite state at t={self.t}: q={q}, p={p}")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def y(self):
        return np.concatenate([self.q, self.p])


def _rowwise(fn, x, out_shape):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.asarray(fn(x), dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    res = np.array([np.asarray(fn(row), dtype=float) for row in flat])
    return res.reshape(x.shape[:-1] + out_shape)


@dataclass(frozen=True)
class Problem:
    """A Lorentz-force problem ``q' = p, p' = F_mag(q, p) - grad U(q)``.

    Parameters
    ----------
    dim : int
        Configuration-space dimension ``m``.
    grad_U, potential_U : callable
        Gradient of the potential and the potential itself.
    magnetic : CrossField or MatrixField
        The velocity-dependent force. ``CrossField`` requires ``dim == 3``.
    hessian_U : callable, optional
        Hessian of ``U``; used only to precondition the electric blended solver.
    extra_invariants : mapping of name -> callable(q, p)
        Additional conserved quantities to monitor.
    q0, p0 : array_like, optional
        Default initial state.
    """

    dim: int
    grad_U: Callable
    potential_U: Callable
    magnetic: Magnetic
    hessian_U: Optional[Callable] = None
    extra_invariants: Mapping[str, Callable] = field(default_factory=dict)
    label: str = ""
    q0: Optional[np.ndarray] = None
    p0: Optional[np.ndarray] = None
    vectorized: bool = True
    validation_radius: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if isinstance(self.magnetic, CrossField) and self.dim != 3:
            raise ValueError(f"a CrossField needs dim == 3, got dim={self.dim}")
        if not isinstance(self.magnetic, (CrossField, MatrixField)):
            raise TypeError("magnetic must be a CrossField or a MatrixField")

    def initial_state(self, t=0.0):
        if self.q0 is None or self.p0 is None:
            raise ValueError(f"problem {self.label!r} has no default initial state")
        return State(t, self.q0, self.p0)

    def grad(self, q):
        if self.vectorized:
            return np.asarray(self.grad_U(q), dtype=float)
        return _rowwise(self.grad_U, q, (self.dim,))

    def potential(self, q):
        if self.vectorized:
            return np.asarray(self.potential_U(q), dtype=float)
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            return np.asarray(self.potential_U(q), dtype=float)
        return np.array([self.potential_U(row) for row in q.reshape(-1, self.dim)]).reshape(q.shape[:-1])

    def hessian(self, q):
        if self.hessian_U is None:
            return fd_hessian(self, q)
        if self.vectorized:
            return np.asarray(self.hessian_U(q), dtype=float)
        return _rowwise(self.hessian_U, q, (self.dim, self.dim))

    def rotation_vector(self, q):
        if self.vectorized:
            return self.magnetic.rotation_vector(q)
        return _rowwise(self.magnetic.rotation_vector, q, (3,))

    def matrix(self, q):
        if self.vectorized:
            return np.asarray(self.magnetic.B(q), dtype=float)
        return _rowwise(self.magnetic.B, q, (self.dim, self.dim))

    def kernels(self):
        """``(force(q, p), grad(q))`` callables with dispatch resolved once."""
        if not self.vectorized:
            return self.magnetic_force, self.grad
        mag = self.magnetic
        if isinstance(mag, CrossField):
            L = mag.L
            if mag.orientation == P_CROSS_L:
                def force(q, p):
                    return _cross(p, L(q))
            else:
                def force(q, p):
                    return _cross(L(q), p)
        else:
            B = mag.B

            def force(q, p):
                return np.einsum("...ij,...j->...i", B(q), p)
        return force, self.grad_U

    def magnetic_force(self, q, p):
        """Magnetic force at (batched) positions ``q`` and velocities ``p``."""
        if isinstance(self.magnetic, CrossField):
            return _cross(p, self.rotation_vector(q))
        return np.einsum("...ij,...j->...i", self.matrix(q), p)


def _check_dims(problem, q, p):
    if q.shape[-1] != problem.dim or p.shape[-1] != problem.dim:
        raise ValueError(
            f"expected vectors of length {problem.dim}, got q {q.shape} and p {p.shape}"
        )


def apply_magnetic(problem, q, p):
    """Magnetic force ``p x L(q)`` (or ``L(q) x p``) or ``B(q) p``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    _check_dims(problem, q, p)
    return problem.magnetic_force(q, p)


def magnetic_matrix(problem, q):
    """The ``m x m`` skew matrix ``B`` with magnetic force ``B @ p`` at ``q``."""
    q = np.asarray(q, dtype=float)
    if isinstance(problem.magnetic, MatrixField):
        return problem.matrix(q)
    # p x w = -(w x p)
    return -_skew(problem.rotation_vector(q))


def hamiltonian(problem, state):
    """Energy ``|p|^2 / 2 + U(q)``."""
    p = state.p
    return float(0.5 * np.dot(p, p) + problem.potential(state.q))


def invariants(problem, state):
    """Values of the extra invariants at ``state``, keyed by name."""
    return {name: float(fn(state.q, state.p)) for name, fn in problem.extra_invariants.items()}


def fd_hessian(problem, q):
    """Central finite-difference Hessian of ``U`` built from ``grad_U``."""
    q = np.asarray(q, dtype=float)
    m = problem.dim
    H = np.empty((m, m))
    step = np.cbrt(np.finfo(float).eps) * (1.0 + np.abs(q))
    for j in range(m):
        dq = np.zeros(m)
        dq[j] = step[j]
        H[:, j] = (problem.grad(q + dq) - problem.grad(q - dq)) / (2.0 * step[j])
    return 0.5 * (H + H.T)


# -- built-in problems -------------------------------------------------------

_POLY_SQUARE = np.array([3.0, -3.0, 0.0])
_POLY_CUBE = np.array([0.8, 4.0, 4.0])
_POTENTIAL_CUBE = np.array([1.0, -1.0, 0.0])
_POTENTIAL_QUARTIC = np.array([0.2, 1.0, 1.0])
_PLANE = np.array([1.0, 1.0, 0.0])
_E3 = np.array([0.0, 0.0, 1.0])
_LINEAR_FIELD = 0.5 * np.array([[0.0, 1.0, -1.0], [1.0, 0.0, 1.0], [-1.0, 1.0, 0.0]])


def _poly_potential(q):
    q = np.asarray(q, dtype=float)
    q2 = q * q
    return (q2 * q) @ _POTENTIAL_CUBE + (q2 * q2) @ _POTENTIAL_QUARTIC


def _poly_grad(q):
    q2 = q * q
    return q2 * (_POLY_SQUARE + q * _POLY_CUBE)


def _poly_hessian(q):
    q = np.asarray(q, dtype=float)
    diag = 2.0 * q * _POLY_SQUARE + 3.0 * q * q * _POLY_CUBE
    return diag[..., :, None] * np.eye(3)


def _planar_radius2(q):
    return q[..., 0] * q[..., 0] + q[..., 1] * q[..., 1]


def _radial_field(q):
    """``L(q) = (0, 0, sqrt(q1^2 + q2^2))``."""
    return np.hypot(q[..., 0], q[..., 1])[..., None] * _E3


def _linear_field(q):
    """``L(q) = (q2 - q3, q1 + q3, q2 - q1) / 2``."""
    return q @ _LINEAR_FIELD.T


def _coulomb_potential(q):
    return 0.1 / np.sqrt(_planar_radius2(q))


def _coulomb_grad(q):
    r2 = _planar_radius2(q)
    return (-0.1 / (r2 * np.sqrt(r2)))[..., None] * (q * _PLANE)


def _coulomb_hessian(q):
    q = np.asarray(q, dtype=float)
    r2 = _planar_radius2(q)
    r = np.sqrt(r2)
    qp = q * _PLANE
    H = 3.0 * qp[..., :, None] * qp[..., None, :] / (r2 * r2 * r)[..., None, None]
    H -= (np.eye(3) * _PLANE) / (r2 * r)[..., None, None]
    return 0.1 * H


def _inverse_square_potential(q):
    return 0.1 / _planar_radius2(q)


def _inverse_square_grad(q):
    r2 = _planar_radius2(q)
    return (-0.2 / (r2 * r2))[..., None] * (q * _PLANE)


def _inverse_square_hessian(q):
    q = np.asarray(q, dtype=float)
    r2 = _planar_radius2(q)
    qp = q * _PLANE
    H = 4.0 * qp[..., :, None] * qp[..., None, :] / (r2**3)[..., None, None]
    H -= (np.eye(3) * _PLANE) / (r2 * r2)[..., None, None]
    return 0.2 * H


def _angular_momentum(q, p):
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    r2 = _planar_radius2(q)
    return q[..., 0] * p[..., 1] - q[..., 1] * p[..., 0] - r2**1.5 / 3.0


def builtin_problem(name, orientation=L_CROSS_P):
    """Return one of the built-in problems.

    ``ex1`` and ``ex2`` share the quartic potential
    ``U = q1^3 - q2^3 + q1^4/5 + q2^4 + q3^4`` and the initial data
    ``q = (0, 1, 0.1)``, ``p = (0.09, 0.55, 0.3)``; the magnetic field is
    ``(0, 0, |q_12|)`` for ``ex1`` and ``(q2 - q3, q1 + q3, q2 - q1) / 2`` for
    ``ex2``. ``ex3`` is the planar guiding-centre problem with field
    ``(0, 0, |q_12|)``, ``U = 1 / (10 |q_12|)`` and the angular momentum
    ``M = q1 p2 - q2 p1 - |q_12|^3 / 3`` as an extra invariant, started from
    ``q = (0, 1, 0)``, ``p = (0.1, 0.01, 0)``. ``ex3sq`` is the same with
    ``U = 1 / (10 |q_12|^2)``. Here ``|q_12| = sqrt(q1^2 + q2^2)``.

    The magnetic force is ``L(q) x p = B(q) p`` by default; ``M`` is only
    conserved with this orientation.
    """
    if name in ("ex1", "ex2"):
        return Problem(
            dim=3,
            grad_U=_poly_grad,
            potential_U=_poly_potential,
            hessian_U=_poly_hessian,
            magnetic=CrossField(_radial_field if name == "ex1" else _linear_field, orientation),
            label=name,
            q0=np.array([0.0, 1.0, 0.1]),
            p0=np.array([0.09, 0.55, 0.3]),
        )
    if name in ("ex3", "ex3sq"):
        if name == "ex3":
            fields = (_coulomb_grad, _coulomb_potential, _coulomb_hessian)
        else:
            fields = (_inverse_square_grad, _inverse_square_potential, _inverse_square_hessian)
        return Problem(
            dim=3,
            grad_U=fields[0],
            potential_U=fields[1],
            hessian_U=fields[2],
            magnetic=CrossField(_radial_field, orientation),
            extra_invariants={"M": _angular_momentum},
            label=name,
            q0=np.array([0.0, 1.0, 0.0]),
            p0=np.array([0.1, 0.01, 0.0]),
            validation_radius=0.5,
        )
    raise KeyError(f"unknown problem {name!r}; choose from {', '.join(BUILTIN_PROBLEMS)}")


BUILTIN_PROBLEMS = ("ex1", "ex2", "ex3", "ex3sq")


def free_flight(dim=3):
    """No fields at all: straight-line motion.

    In three dimensions the (zero) magnetic term is a ``CrossField`` so the
    Boris method applies as well.
    """
    return Problem(
        dim=dim,
        grad_U=lambda q: np.zeros_like(np.asarray(q, dtype=float)),
        potential_U=lambda q: np.zeros(np.shape(q)[:-1]),
        hessian_U=lambda q: np.zeros(np.shape(q) + (dim,)),
        magnetic=(
            CrossField(lambda q: np.zeros(np.shape(q)), uniform=True)
            if dim == 3
            else MatrixField(lambda q: np.zeros(np.shape(q) + (dim,)), uniform=True)
        ),
        label="free",
        q0=np.zeros(dim),
        p0=np.arange(1.0, dim + 1.0) / dim,
    )


def validate_problem(problem, n_samples=100, radius=None, seed=0, center=None):
    """Check field consistency at random points near the initial state.

    Verifies skewness of the magnetic term, that ``grad_U`` matches central
    differences of ``potential_U`` (1e-6 relative) and, when supplied, that
    ``hessian_U`` is symmetric (1e-10) and matches differences of ``grad_U``
    (1e-5 relative). Raises ``ProblemValidationError`` on the first failure.
    """
    rng = np.random.default_rng(seed)
    radius = problem.validation_radius if radius is None else radius
    m = problem.dim
    if center is None:
        center = np.zeros(m) if problem.q0 is None else problem.q0
    center = np.asarray(center, dtype=float)
    pcenter = np.zeros(m) if problem.p0 is None else np.asarray(problem.p0, dtype=float)
    eps = np.finfo(float).eps
    for _ in range(n_samples):
        d = rng.normal(size=m)
        d *= radius * rng.uniform() ** (1.0 / m) / np.linalg.norm(d)
        q = center + d
        p = pcenter + rng.normal(size=m)

        force = apply_magnetic(problem, q, p)
        if abs(np.dot(p, force)) > 1e-12 * max(np.linalg.norm(p) * np.linalg.norm(force), 1e-300):
            raise ProblemValidationError(f"magnetic force not orthogonal to p at q={q}")
        if isinstance(problem.magnetic, MatrixField):
            B = problem.matrix(q)
            if np.max(np.abs(B + B.T)) > 1e-12:
                raise ProblemValidationError(f"B(q) is not skew-symmetric at q={q}")

        g = problem.grad(q)
        step = np.cbrt(eps) * (1.0 + np.abs(q))
        fd = np.empty(m)
        for j in range(m):
            dq = np.zeros(m)
            dq[j] = step[j]
            fd[j] = (problem.potential(q + dq) - problem.potential(q - dq)) / (2 * step[j])
        gscale = np.max(np.abs(g))
        if np.max(np.abs(fd - g)) > 1e-6 * gscale + 1e-9:
            raise ProblemValidationError(f"grad_U disagrees with differences of U at q={q}")

        if problem.hessian_U is not None:
            H = problem.hessian(q)
            if np.max(np.abs(H - H.T)) > 1e-10:
                raise ProblemValidationError(f"hessian_U is not symmetric at q={q}")
            Hfd = fd_hessian(problem, q)
            hscale = np.max(np.abs(H))
            if np.max(np.abs(Hfd - H)) > 1e-5 * hscale + 1e-8:
                raise ProblemValidationError(f"hessian_U disagrees with differences of grad_U at q={q}")
