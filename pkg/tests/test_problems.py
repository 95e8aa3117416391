import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limcpd.problems import (
    BUILTIN_PROBLEMS,
    CrossField,
    MatrixField,
    Problem,
    ProblemValidationError,
    State,
    apply_magnetic,
    builtin_problem,
    fd_hessian,
    free_flight,
    hamiltonian,
    invariants,
    magnetic_matrix,
    validate_problem,
)

vec3 = st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3).map(np.array)


def _const_problem(L, orientation="p_cross_L"):
    return Problem(
        dim=3,
        grad_U=lambda q: np.zeros_like(q),
        potential_U=lambda q: np.zeros(np.shape(q)[:-1]),
        magnetic=CrossField(lambda q: np.broadcast_to(np.asarray(L, float), np.shape(q)), orientation),
    )


# -- magnetic term -----------------------------------------------------------

def test_apply_magnetic_unit_axes():
    P = _const_problem([0, 0, 1])
    np.testing.assert_array_equal(apply_magnetic(P, np.zeros(3), [1.0, 0, 0]), [0, -1, 0])
    Q = _const_problem([0, 0, 1], "L_cross_p")
    np.testing.assert_array_equal(apply_magnetic(Q, np.zeros(3), [1.0, 0, 0]), [0, 1, 0])


def test_apply_magnetic_zero_velocity():
    for name in BUILTIN_PROBLEMS:
        P = builtin_problem(name)
        np.testing.assert_array_equal(apply_magnetic(P, P.q0, np.zeros(3)), 0.0)


def test_apply_magnetic_ex1_initial_data():
    q, p = [0, 1, 0.1], [0.09, 0.55, 0.3]
    fwd = builtin_problem("ex1", orientation="p_cross_L")
    np.testing.assert_allclose(fwd.rotation_vector(np.array(q, float)), [0, 0, 1])
    np.testing.assert_allclose(apply_magnetic(fwd, q, p), [0.55, -0.09, 0], atol=1e-16)
    # the default orientation is the opposite sign
    np.testing.assert_allclose(apply_magnetic(builtin_problem("ex1"), q, p), [-0.55, 0.09, 0], atol=1e-16)


def test_apply_magnetic_matrix_field():
    B = np.array([[0.0, 2.0], [-2.0, 0.0]])
    P = Problem(dim=2, grad_U=lambda q: 0 * q, potential_U=lambda q: 0.0,
                magnetic=MatrixField(lambda q: B))
    np.testing.assert_array_equal(apply_magnetic(P, [0, 0], [1.0, 3.0]), [6.0, -2.0])


def test_apply_magnetic_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_magnetic(builtin_problem("ex1"), np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        Problem(dim=2, grad_U=None, potential_U=None, magnetic=CrossField(lambda q: q))


def test_magnetic_matrix_reproduces_force():
    rng = np.random.default_rng(1)
    for name in ("ex1", "ex2"):
        for orientation in ("p_cross_L", "L_cross_p"):
            P = builtin_problem(name, orientation)
            q, p = rng.normal(size=3), rng.normal(size=3)
            B = magnetic_matrix(P, q)
            np.testing.assert_allclose(B, -B.T, atol=0)
            np.testing.assert_allclose(B @ p, apply_magnetic(P, q, p), atol=1e-15)


@pytest.mark.parametrize("name", BUILTIN_PROBLEMS)
def test_magnetic_force_orthogonal_to_velocity(name):
    P = builtin_problem(name)
    rng = np.random.default_rng(7)
    q = P.q0 + rng.uniform(-0.5, 0.5, size=(1000, 3))
    p = rng.normal(size=(1000, 3))
    f = apply_magnetic(P, q, p)
    scale = np.linalg.norm(p, axis=1) * np.linalg.norm(f, axis=1)
    assert np.all(np.abs(np.einsum("ij,ij->i", p, f)) <= 1e-12 * np.maximum(scale, 1e-300))


@pytest.mark.parametrize("name", BUILTIN_PROBLEMS)
def test_energy_rate_vanishes(name):
    # dH/dt = grad U . p + p . (F_mag - grad U)
    P = builtin_problem(name)
    rng = np.random.default_rng(3)
    for _ in range(200):
        q = P.q0 + rng.uniform(-0.3, 0.3, size=3)
        p = rng.normal(size=3)
        g = P.grad(q)
        rate = g @ p + p @ (apply_magnetic(P, q, p) - g)
        assert abs(rate) <= 1e-12 * (1 + np.abs(g).max()) * (1 + np.abs(p).max()) ** 2


@settings(max_examples=100, deadline=None)
@given(q=vec3, p=vec3)
def test_cross_field_is_skew_bilinear(q, p):
    P = builtin_problem("ex2")
    f = apply_magnetic(P, q, p)
    assert abs(p @ f) <= 1e-12 * (1 + np.linalg.norm(p) * np.linalg.norm(f))
    np.testing.assert_allclose(apply_magnetic(P, q, 2.0 * p), 2.0 * f, atol=1e-14)


# -- energy, invariants, builtins --------------------------------------------

def test_hamiltonian_examples():
    zero = free_flight()
    assert hamiltonian(zero, State(0.0, np.ones(3), np.zeros(3))) == 0.0
    assert hamiltonian(builtin_problem("ex1"), builtin_problem("ex1").initial_state()) == pytest.approx(0.2004, abs=1e-15)
    ex3 = builtin_problem("ex3")
    # 0.5 * (0.1^2 + 0.01^2) + 1/10
    assert hamiltonian(ex3, ex3.initial_state()) == pytest.approx(0.10505, abs=1e-15)


def test_ex1_gradient_example():
    P = builtin_problem("ex1")
    np.testing.assert_allclose(P.grad(np.array([0.0, 1.0, 0.1])), [0.0, 1.0, 0.004], atol=1e-16)


def test_ex2_field_example():
    P = builtin_problem("ex2", orientation="p_cross_L")
    np.testing.assert_allclose(P.rotation_vector(np.array([1.0, 2.0, 3.0])), [-0.5, 2.0, 0.5])


def test_ex3_angular_momentum_example():
    P = builtin_problem("ex3")
    assert invariants(P, P.initial_state())["M"] == pytest.approx(-0.1 - 1 / 3, abs=1e-15)
    assert invariants(builtin_problem("ex1"), builtin_problem("ex1").initial_state()) == {}


def test_builtin_unknown_name():
    with pytest.raises(KeyError):
        builtin_problem("ex4")


def test_ex3_potentials():
    q = np.array([0.6, 0.8, 0.0])
    assert builtin_problem("ex3").potential(q) == pytest.approx(0.1)
    assert builtin_problem("ex3sq").potential(2 * q) == pytest.approx(0.025)


def test_batched_evaluation_matches_pointwise():
    rng = np.random.default_rng(0)
    for name in BUILTIN_PROBLEMS:
        P = builtin_problem(name)
        q = P.q0 + rng.uniform(-0.3, 0.3, size=(5, 3))
        np.testing.assert_allclose(P.grad(q), np.array([P.grad(x) for x in q]), atol=0)
        np.testing.assert_allclose(P.potential(q), [P.potential(x) for x in q], atol=0)
        np.testing.assert_allclose(P.hessian(q), np.array([P.hessian(x) for x in q]), atol=0)


# -- finite-difference consistency -------------------------------------------

@pytest.mark.parametrize("name", BUILTIN_PROBLEMS)
def test_builtins_validate(name):
    validate_problem(builtin_problem(name), n_samples=100)


@pytest.mark.parametrize("name", BUILTIN_PROBLEMS)
def test_gradient_matches_central_differences(name):
    P = builtin_problem(name)
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(100):
        q = P.q0 + rng.uniform(-0.3, 0.3, size=3)
        fd = np.array([(P.potential(q + h * e) - P.potential(q - h * e)) / (2 * h) for e in np.eye(3)])
        g = P.grad(q)
        assert np.max(np.abs(fd - g)) <= 1e-6 * np.max(np.abs(g)) + 1e-9


@pytest.mark.parametrize("name", BUILTIN_PROBLEMS)
def test_hessian_symmetric_and_matches_differences(name):
    P = builtin_problem(name)
    rng = np.random.default_rng(12)
    for _ in range(100):
        q = P.q0 + rng.uniform(-0.3, 0.3, size=3)
        H = P.hessian(q)
        assert np.max(np.abs(H - H.T)) <= 1e-10
        assert np.max(np.abs(H - fd_hessian(P, q))) <= 1e-5 * np.max(np.abs(H)) + 1e-8


def test_validate_rejects_wrong_gradient():
    good = builtin_problem("ex1")
    bad = Problem(dim=3, grad_U=lambda q: 2 * good.grad_U(q), potential_U=good.potential_U,
                  magnetic=good.magnetic, q0=good.q0, p0=good.p0)
    with pytest.raises(ProblemValidationError, match="grad"):
        validate_problem(bad)


def test_validate_rejects_non_skew_matrix():
    P = Problem(dim=2, grad_U=lambda q: 0 * q, potential_U=lambda q: 0.0 * q[..., 0],
                magnetic=MatrixField(lambda q: np.array([[0.0, 1.0], [1.0, 0.0]])))
    with pytest.raises(ProblemValidationError):
        validate_problem(P)


def test_validate_rejects_wrong_hessian():
    good = builtin_problem("ex1")
    bad = Problem(dim=3, grad_U=good.grad_U, potential_U=good.potential_U,
                  hessian_U=lambda q: good.hessian_U(q) + 0.1 * np.eye(3),
                  magnetic=good.magnetic, q0=good.q0, p0=good.p0)
    with pytest.raises(ProblemValidationError, match="[Hh]essian"):
        validate_problem(bad)


def test_state_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        State(0.0, [np.nan, 0, 0], [0, 0, 0])
    s = State(1.0, [1, 2, 3], [4, 5, 6])
    np.testing.assert_array_equal(s.y, [1, 2, 3, 4, 5, 6])


def test_pointwise_problem_is_supported():
    ex1 = builtin_problem("ex1")
    P = Problem(dim=3, grad_U=lambda q: ex1.grad_U(np.asarray(q)), potential_U=lambda q: float(ex1.potential_U(q)),
                magnetic=CrossField(lambda q: np.array([0.0, 0.0, np.hypot(q[0], q[1])]), "L_cross_p"),
                vectorized=False, q0=ex1.q0, p0=ex1.p0)
    q = ex1.q0 + np.random.default_rng(0).uniform(-0.1, 0.1, size=(4, 3))
    np.testing.assert_allclose(P.grad(q), ex1.grad(q))
    np.testing.assert_allclose(P.potential(q), ex1.potential(q))
    np.testing.assert_allclose(P.magnetic_force(q, q), ex1.magnetic_force(q, q))
