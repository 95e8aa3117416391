"""Shifted orthonormal Legendre polynomials on [0, 1] and the LIM tableau.

The basis satisfies ``int_0^1 P_i(x) P_j(x) dx = delta_ij`` with positive
leading coefficients, i.e. ``P_j(x) = sqrt(2j + 1) * L_j(2x - 1)`` where
``L_j`` is the classical Legendre polynomial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "GaussRule",
    "Tableau",
    "legendre_eval",
    "legendre_integral",
    "legendre_matrix",
    "legendre_integral_matrix",
    "gauss_rule",
    "build_tableau",
    "xs_closed_form",
]

MAX_RULE_SIZE = 64
_NEWTON_MAX_ITER = 100


def _classical_legendre(n, y):
    """Return ``[L_0(y), ..., L_n(y)]`` stacked along the first axis."""
    y = np.asarray(y, dtype=float)
    out = np.empty((n + 1,) + y.shape)
    out[0] = 1.0
    if n >= 1:
        out[1] = y
    for j in range(1, n):
        out[j + 1] = ((2 * j + 1) * y * out[j] - j * out[j - 1]) / (j + 1)
    return out


def legendre_eval(j, x):
    """Evaluate the orthonormal shifted Legendre polynomial ``P_j`` at ``x``.

    Works elementwise on arrays.
    """
    if j < 0:
        raise ValueError(f"degree must be nonnegative, got {j}")
    vals = _classical_legendre(j, 2.0 * np.asarray(x, dtype=float) - 1.0)[j]
    out = np.sqrt(2 * j + 1) * vals
    return float(out) if out.ndim == 0 else out


def legendre_integral(j, c):
    """Return ``int_0^c P_j(x) dx``.

    Uses ``(2j+1) L_j = L'_{j+1} - L'_{j-1}`` so that, for ``j >= 1``, the
    integral is ``(L_{j+1}(y) - L_{j-1}(y)) / (2 sqrt(2j+1))`` with
    ``y = 2c - 1`` (the lower limit contributes zero since
    ``L_{j+1}(-1) = L_{j-1}(-1)``).
    """
    if j < 0:
        raise ValueError(f"degree must be nonnegative, got {j}")
    c = np.asarray(c, dtype=float)
    if j == 0:
        out = c.copy()
    else:
        leg = _classical_legendre(j + 1, 2.0 * c - 1.0)
        out = (leg[j + 1] - leg[j - 1]) / (2.0 * np.sqrt(2 * j + 1))
    return float(out) if out.ndim == 0 else out


def legendre_matrix(x, ncols):
    """Matrix with entries ``P_j(x_i)``, shape ``(len(x), ncols)``."""
    x = np.asarray(x, dtype=float)
    leg = _classical_legendre(max(ncols - 1, 0), 2.0 * x - 1.0)[:ncols]
    scale = np.sqrt(2.0 * np.arange(ncols) + 1.0)
    return (leg * scale[:, None]).T


def legendre_integral_matrix(x, ncols):
    """Matrix with entries ``int_0^{x_i} P_j``, shape ``(len(x), ncols)``."""
    x = np.asarray(x, dtype=float)
    return np.column_stack([legendre_integral(j, x) for j in range(ncols)])


@dataclass(frozen=True)
class GaussRule:
    """Gauss-Legendre rule on [0, 1] with ascending nodes."""

    n: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f):
        """Apply the rule to a vectorized callable."""
        return np.dot(self.weights, f(self.nodes))


def _newton_roots(n):
    # Roots on (-1, 1) by Newton's method from the interlacing guesses
    # cos(pi (i - 1/4) / (n + 1/2)); only the nonnegative half is computed.
    half = (n + 1) // 2
    idx = np.arange(1, half + 1)
    y = np.cos(np.pi * (idx - 0.25) / (n + 0.5))
    tiny = 4.0 * np.finfo(float).eps
    for _ in range(_NEWTON_MAX_ITER):
        leg = _classical_legendre(n, y)
        pn, pn1 = leg[n], leg[n - 1]
        dpn = n * (pn1 - y * pn) / (1.0 - y * y)
        step = pn / dpn
        y = y - step
        if np.max(np.abs(step)) <= tiny:
            break
    else:
        raise RuntimeError(
            f"Gauss-Legendre node refinement for n={n} did not converge in "
            f"{_NEWTON_MAX_ITER} iterations (last step {np.max(np.abs(step)):.3e})"
        )
    leg = _classical_legendre(n, y)
    dpn = n * (leg[n - 1] - y * leg[n]) / (1.0 - y * y)
    resid = np.abs(leg[n])
    # |L_n| at a double-precision root is bounded by roughly eps * |L_n'|.
    if np.any(resid > 64 * np.finfo(float).eps * (1.0 + np.abs(dpn))):
        raise RuntimeError(f"Gauss-Legendre residual too large for n={n}: {resid.max():.3e}")
    w = 2.0 / ((1.0 - y * y) * dpn * dpn)
    if n % 2 == 1:
        y[-1] = 0.0
    return y, w


@lru_cache(maxsize=None)
def _gauss_rule_cached(n):
    if n == 1:
        return GaussRule(1, np.array([0.5]), np.array([1.0]))
    y, w = _newton_roots(n)
    # y is descending and nonnegative; mirror to the full symmetric set.
    if n % 2 == 1:
        ys = np.concatenate([-y[:-1], y[::-1]])
        ws = np.concatenate([w[:-1], w[::-1]])
    else:
        ys = np.concatenate([-y, y[::-1]])
        ws = np.concatenate([w, w[::-1]])
    # Map to [0, 1]; build the upper half from the lower so c_l + c_{n-1-l} = 1.
    nodes = 0.5 * (1.0 + ys)
    nodes[n - (n // 2):] = 1.0 - nodes[: n // 2][::-1]
    weights = 0.5 * ws
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussRule(n, nodes, weights)


def gauss_rule(n):
    """Return the ``n``-point Gauss-Legendre rule on [0, 1].

    Parameters
    ----------
    n : int
        Number of nodes, ``1 <= n <= 64``.

    Raises
    ------
    ValueError
        If ``n`` is out of range.
    RuntimeError
        If Newton refinement of the nodes fails to converge.
    """
    n = int(n)
    if not 1 <= n <= MAX_RULE_SIZE:
        raise ValueError(f"rule size must satisfy 1 <= n <= {MAX_RULE_SIZE}, got {n}")
    return _gauss_rule_cached(n)


def xs_closed_form(s):
    """The ``s x s`` matrix ``X_s`` from its entries ``xi_i = 1 / (2 sqrt|4 i^2 - 1|)``."""
    xi = 1.0 / (2.0 * np.sqrt(np.abs(4.0 * np.arange(s) ** 2 - 1.0)))
    X = np.zeros((s, s))
    X[0, 0] = xi[0]
    for i in range(1, s):
        X[i, i - 1] = xi[i]
        X[i - 1, i] = -xi[i]
    return X


def _min_modulus_eigenvalue(X):
    vals, vecs = np.linalg.eig(X)
    i = int(np.argmin(np.abs(vals)))
    lam, v = vals[i], vecs[:, i]
    resid = np.linalg.norm(X @ v - lam * v) / np.linalg.norm(v)
    if resid > 1e-12:
        raise RuntimeError(f"eigenpair check failed for X_s: residual {resid:.3e}")
    return float(np.abs(lam))


@dataclass(frozen=True)
class Tableau:
    """All ``(k, s)``-dependent constants of the method.

    ``Phat``/``Ihat`` are evaluated at the s-point rule, ``Pmat``/``Imat`` at
    the k-point rule. The ``*_proj`` arrays are ``P^T diag(w)`` products and
    the ``*_pos`` arrays are ``I X_s`` products, precomputed for the step map.
    ``stage_map`` stacks ``[Ihat X_s; I X_s; Ihat]``.
    """

    k: int
    s: int
    inner_rule: GaussRule
    outer_rule: GaussRule
    Phat: np.ndarray
    Ihat: np.ndarray
    Pmat: np.ndarray
    Imat: np.ndarray
    Xs: np.ndarray
    Xs_inv: np.ndarray
    rho_s: float
    e1: np.ndarray
    inner_proj: np.ndarray = field(repr=False)
    outer_proj: np.ndarray = field(repr=False)
    inner_pos: np.ndarray = field(repr=False)
    outer_pos: np.ndarray = field(repr=False)
    stage_nodes: np.ndarray = field(repr=False)
    stage_map: np.ndarray = field(repr=False)

    @property
    def c_hat(self):
        return self.inner_rule.nodes

    @property
    def c(self):
        return self.outer_rule.nodes


@lru_cache(maxsize=None)
def _build_tableau_cached(k, s):
    inner = gauss_rule(s)
    outer = gauss_rule(k)
    Phat = legendre_matrix(inner.nodes, s)
    Ihat = legendre_integral_matrix(inner.nodes, s)
    Pmat = legendre_matrix(outer.nodes, s)
    Imat = legendre_integral_matrix(outer.nodes, s)
    Xs = xs_closed_form(s)
    product = Phat.T @ (inner.weights[:, None] * Ihat)
    if np.max(np.abs(product - Xs)) > 1e-12:
        raise RuntimeError(f"X_s closed form disagrees with the quadrature product for s={s}")
    Xs_inv = np.linalg.inv(Xs)
    e1 = np.zeros(s)
    e1[0] = 1.0
    arrays = dict(
        Phat=Phat,
        Ihat=Ihat,
        Pmat=Pmat,
        Imat=Imat,
        Xs=Xs,
        Xs_inv=Xs_inv,
        e1=e1,
        inner_proj=Phat.T * inner.weights,
        outer_proj=Pmat.T * outer.weights,
        inner_pos=Ihat @ Xs,
        outer_pos=Imat @ Xs,
        # inner positions, outer positions and inner velocities stacked for one matmul
        stage_nodes=np.concatenate([inner.nodes, outer.nodes]),
        stage_map=np.vstack([Ihat @ Xs, Imat @ Xs, Ihat]),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return Tableau(k=k, s=s, inner_rule=inner, outer_rule=outer,
                   rho_s=_min_modulus_eigenvalue(Xs), **arrays)


def build_tableau(k, s):
    """Build (or fetch from cache) the tableau of LIM(k, s).

    Parameters
    ----------
    k : int
        Size of the Gauss rule used for the electric-field integrals, ``k >= s``.
    s : int
        Number of basis polynomials (the method has order ``2s``), ``s >= 2``.
    """
    k, s = int(k), int(s)
    if s < 2:
        raise ValueError(f"LIM(k, s) needs s >= 2 to form the position update, got s={s}")
    if k < s:
        raise ValueError(f"LIM(k, s) needs k >= s, got k={k}, s={s}")
    if k > MAX_RULE_SIZE:
        raise ValueError(f"k must not exceed {MAX_RULE_SIZE}, got {k}")
    return _build_tableau_cached(k, s)
