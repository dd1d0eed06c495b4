import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopfreach.convex import Box
from hopfreach.dynamics import (IntegrationDiverged, LinearSystem, CallableSystem, Trajectory,
                                dubins_relative, integrate, rk4_step, vanderpol)

finite = st.floats(-2.0, 2.0, allow_nan=False)


def integrator_1d():
    return LinearSystem([[0.0]], [[1.0]], U=Box([0.0], [1.0]))


def fd_jacobian(system, x, u, d, h=1e-6):
    n = x.size
    J = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (system.field(x + e, u, d) - system.field(x - e, u, d)) / (2 * h)
    return J


def test_integrator_constant_input():
    # [TRIVIAL] xdot = u, u = 1 over [0, 1]
    tr = integrate(integrator_1d(), [0.0], [1.0], None, np.linspace(0, 1, 101))
    assert abs(tr.final[0] - 1.0) <= 1e-9


def test_zero_field_keeps_state():
    # [TRIVIAL]
    sys0 = LinearSystem([[0.0, 0.0], [0.0, 0.0]], np.zeros((2, 1)))
    tr = integrate(sys0, [0.3, -1.7], None, None, np.linspace(0, 2, 11))
    assert np.array_equal(tr.final, np.array([0.3, -1.7]))


def test_vanderpol_step_halving():
    # [DERIVED] Richardson oracle: step-halved RK4 run
    v = vanderpol()
    coarse = integrate(v, [1.0, 0.0], None, None, np.linspace(0, 0.39, 79)).final
    fine = integrate(v, [1.0, 0.0], None, None, np.linspace(0, 0.39, 157)).final
    assert np.max(np.abs(coarse - fine)) <= 1e-6


def test_rk4_order():
    v = vanderpol()
    ref = integrate(v, [1.0, 0.5], None, None, np.linspace(0, 1, 1601)).final
    e1 = np.abs(integrate(v, [1.0, 0.5], None, None, np.linspace(0, 1, 21)).final - ref).max()
    e2 = np.abs(integrate(v, [1.0, 0.5], None, None, np.linspace(0, 1, 41)).final - ref).max()
    assert e1 / e2 >= 8.0


def test_vanderpol_defaults():
    # [PAPER] |u| <= 1, |d| <= 1/2, h1 = h2 = [0, 1]^T
    v = vanderpol()
    assert np.allclose(v.U.bounds(), ([-1.0], [1.0]))
    assert np.allclose(v.D.bounds(), ([-0.5], [0.5]))
    assert np.allclose(v.control_gain(np.zeros(2)), [[0.0], [1.0]])
    assert np.allclose(v.disturbance_gain(np.zeros(2)), [[0.0], [1.0]])


def test_vanderpol_derivatives_examples():
    v = vanderpol()
    assert np.allclose(v.drift(np.zeros(2)), 0.0)
    # [DERIVED] symbolic jacobian at the origin
    assert np.allclose(v.jacobian_x(np.zeros(2)), [[0, 1], [-1, 1]])
    # [DERIVED] second derivative of mu (1 - x1^2) x2 at (1, 1)
    assert np.allclose(v.hessians_x(np.array([1.0, 1.0]))[1], [[-2, -2], [-2, 0]])
    assert np.allclose(v.hessians_x(np.array([1.0, 1.0]))[0], 0.0)


def test_literal_first_row_flag():
    v = vanderpol(literal_first_row=True)
    assert np.allclose(v.drift(np.array([2.0, 5.0]))[0], 2.0)


def test_dubins_examples():
    d = dubins_relative(1, 3.0, 3.0)
    # [DERIVED] direct substitution
    f = d.field(np.array([0.0, 3.0, -np.pi / 2]), [0.0], [0.0])
    assert np.allclose(f, [-3.0, -3.0, 0.0])
    # [TRIVIAL] aligned headings at the origin
    d2 = dubins_relative(1, 3.0, 2.0)
    assert np.allclose(d2.field(np.zeros(3), [0.0], [0.0]), [-1.0, 0.0, 0.0])


def test_dubins_rejects_bad_arguments():
    with pytest.raises(ValueError):
        dubins_relative(0)
    with pytest.raises(ValueError):
        dubins_relative(2, v_a=0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=2, max_size=2), finite, finite)
def test_vanderpol_affine_structure_and_jacobian(x, u, d):
    v = vanderpol()
    x = np.array(x)
    full = v.field(x, [u], [d])
    parts = v.drift(x) + v.control_gain(x) @ [u] + v.disturbance_gain(x) @ [d]
    assert np.allclose(full, parts, atol=1e-12)
    J = v.jacobian_x(x, [u], [d])
    assert np.allclose(J, fd_jacobian(v, x, [u], [d]), rtol=1e-5, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(finite, min_size=6, max_size=6), finite, st.lists(finite, min_size=2, max_size=2))
def test_dubins_jacobian_and_hessian(x, a, b):
    sysd = dubins_relative(2)
    x = np.array(x)
    J = sysd.jacobian_x(x, [a], b)
    assert np.allclose(J, fd_jacobian(sysd, x, [a], np.array(b)), rtol=1e-5, atol=1e-6)
    H = sysd.hessians_x(x)
    h = 1e-5
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        fd = (sysd.jacobian_x(x + e) - sysd.jacobian_x(x - e)) / (2 * h)
        assert np.allclose(H[..., k], fd, rtol=1e-4, atol=1e-5)


def test_vanderpol_hessian_matches_fd_at_random_points():
    v = vanderpol()
    rng = np.random.default_rng(3)
    for x in rng.uniform(-2, 2, size=(100, 2)):
        H = v.hessians_x(x)
        h = 1e-5
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (v.jacobian_x(x + e) - v.jacobian_x(x - e)) / (2 * h)
            assert np.allclose(H[..., k], fd, rtol=1e-4, atol=1e-6)


def test_mirror_inputs_linear():
    s = LinearSystem([[0.0, 1.0], [-1.0, -0.2]], [[0.0], [1.0]])
    grid = np.linspace(0, 1, 51)
    up = integrate(s, np.zeros(2), [0.7], None, grid).states
    down = integrate(s, np.zeros(2), [-0.7], None, grid).states
    assert np.allclose(up, -down, atol=1e-14)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_step():
    blow = CallableSystem(lambda x, t=0.0: x**3, lambda x, t=0.0: np.zeros(x.shape + (1,)),
                          lambda x, t=0.0: np.zeros(x.shape + (1,)), 1, 1, 1)
    with pytest.raises(IntegrationDiverged, match="step"):
        integrate(blow, [10.0], None, None, np.linspace(0, 5, 11))


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        integrate(integrator_1d(), [0.0], None, None, [0.0])


def test_batched_rk4_matches_single():
    v = vanderpol()
    X = np.array([[0.1, 0.2], [1.0, -0.5]])
    both = rk4_step(v, X, np.zeros((2, 1)), np.zeros((2, 1)), 0.0, 0.01)
    for i in range(2):
        assert np.allclose(both[i], rk4_step(v, X[i], [0.0], [0.0], 0.0, 0.01))
