"""Synchronized Boris method, the second-order symmetric baseline.

Positions and velocities live at integer times. One step reads

    v_half = p_n + h/2 (E(q_n) + p_n x w(q_n))
    q_{n+1} = q_n + h v_half
    v_next = push(v_half, q_{n+1})            # classical kick-rotate-kick
    p_{n+1} = (v_half + v_next) / 2

with ``E = -grad U`` and ``w`` the rotation vector (force ``p x w``). The
positions coincide with those of the staggered Boris scheme started from
``v_{1/2} = v_half``; ``p_n`` is the average of the neighbouring half-step
velocities, so ``p_{n+1}`` solves ``p_{n+1} = v_half + h/2 (E + p_{n+1} x w)``
at ``q_{n+1}``. Both electric kicks of ``push`` are evaluated at
``q_{n+1}``. The map is symmetric: stepping back with ``-h`` inverts it.
"""

from __future__ import annotations

import numpy as np

from .lim import run_loop
from .problems import CrossField, State, _cross

__all__ = ["boris_push", "boris_step", "boris_integrate"]


def boris_push(v, E, w, h):
    """Classical Boris velocity update over a full step ``h``.

    Half electric kick, rotation with ``t = (h/2) w`` and
    ``s = 2t / (1 + |t|^2)``, second half kick. The rotation preserves ``|v|``.
    """
    v_minus = v + 0.5 * h * E
    t = 0.5 * h * w
    s = 2.0 * t / (1.0 + np.dot(t, t))
    v_prime = v_minus + _cross(v_minus, t)
    v_plus = v_minus + _cross(v_prime, s)
    return v_plus + 0.5 * h * E


def _check(problem):
    if problem.dim != 3 or not isinstance(problem.magnetic, CrossField):
        raise ValueError("the Boris method needs a 3-dimensional problem with a CrossField")


def boris_step(problem, state, h):
    """One synchronized Boris step of size ``h`` (may be negative)."""
    _check(problem)
    q, p = state.q, state.p
    E0 = -problem.grad(q)
    v_half = p + 0.5 * h * (E0 + _cross(p, problem.rotation_vector(q)))
    q1 = q + h * v_half
    v_next = boris_push(v_half, -problem.grad(q1), problem.rotation_vector(q1), h)
    return State(state.t + h, q1, 0.5 * (v_half + v_next))


def boris_integrate(problem, state0, h, n_steps, observers=()):
    """Apply ``n_steps`` Boris steps; returns ``n_steps + 1`` run records."""
    _check(problem)
    return run_loop(lambda st: (boris_step(problem, st, h), 0), problem, state0, h, n_steps, observers)
