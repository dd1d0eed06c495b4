import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopfreach.convex import Box
from hopfreach.dynamics import LinearSystem, dubins_relative, grid_for, vanderpol
from hopfreach.errbound import (ErrorBound, ScopeError, box_delta, forward_delta,
                                intersect_tubes, taylor_delta, time_varying_delta)
from hopfreach.lintv import from_linear_system, linearize_at
from hopfreach.tube import backward_tube, disturbance_only_tube

TIMES = grid_for(0.26, 0.005)


def dense_remainder(system, lo, hi, xref, n=201):
    """Oracle: max |f - l| over a dense grid of the box and input vertices."""
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    best = np.zeros(len(lo))
    ulo, uhi = system.U.bounds()
    dlo, dhi = system.D.bounds()
    J = system.jacobian_x(xref)
    f0 = system.field(xref, system.U.center, system.D.center)
    for u in (ulo, uhi):
        for d in (dlo, dhi):
            B1 = system.control_gain(xref)
            B2 = system.disturbance_gain(xref)
            lin = f0 + (X - xref) @ J.T + (u - system.U.center) @ B1.T + (d - system.D.center) @ B2.T
            f = np.array([system.field(x, u, d) for x in X])
            best = np.maximum(best, np.abs(f - lin).max(axis=0))
    return best


def test_linear_system_has_zero_error():
    # [TRIVIAL]
    s = LinearSystem([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]], [[0.0], [1.0]])
    m = from_linear_system(s, TIMES)
    tube = backward_tube(s, Box([0.0, 0.0], [0.5, 0.5]), TIMES)
    assert np.all(taylor_delta(s, m, tube).delta == 0.0)
    assert np.all(time_varying_delta(s, m, tube).delta == 0.0)


def test_vanderpol_box_delta_against_dense_grid():
    # [DERIVED] dense-grid oracle: sound and not wildly loose
    v = vanderpol()
    for xref, lo, hi in [((0.0, 0.0), (-0.6, -0.6), (0.6, 0.6)),
                         ((1.0, 1.0), (0.5, 0.6), (1.5, 1.4)),
                         ((0.2, -0.3), (-0.1, -0.8), (0.7, 0.2))]:
        xref, lo, hi = map(np.array, (xref, lo, hi))
        delta = box_delta(v, lo, hi, xref)
        oracle = dense_remainder(v, lo, hi, xref, n=121)
        assert np.all(delta >= oracle - 1e-12)
        assert np.all(delta <= 3.0 * oracle + 1e-12)


def test_quadratic_scaling():
    # [DERIVED] remainder is second order in the box radius away from degenerate points
    v = vanderpol()
    xref = np.array([1.0, 1.0])
    r = 0.01
    big = box_delta(v, xref - r, xref + r, xref)
    small = box_delta(v, xref - r / 2, xref + r / 2, xref)
    assert big[1] / small[1] == pytest.approx(4.0, rel=0.05)
    assert big[0] == 0.0


def test_dubins_heading_rows_vanish():
    # heading dynamics are linear in the inputs, so their remainder is exactly zero
    d = dubins_relative(3, a_max=2.0, b_max=0.5)
    xref = np.zeros(9)
    xref[1::3] = 3.0
    delta = box_delta(d, xref - 0.3, xref + 0.3, xref)
    assert np.all(delta[2::3] == 0.0)
    assert np.all(delta[0::3] > 0.0)


def test_constant_dominates_time_varying():
    v = vanderpol()
    m = linearize_at(v, np.zeros(2), TIMES)
    tube = backward_tube(v, Box([0.0, 0.0], [0.4, 0.4]), TIMES)
    const = taylor_delta(v, m, tube)
    tv = time_varying_delta(v, m, tube)
    assert np.all(tv.delta <= const.delta + 1e-15)
    assert const.variant == "constant" and tv.variant == "time_varying"


def test_disturbance_only_variant_label_and_bound():
    v = vanderpol()
    m = linearize_at(v, np.zeros(2), TIMES)
    full = backward_tube(v, Box([0.0, 0.0], [0.4, 0.4]), TIMES)
    do = disturbance_only_tube(v, Box([0.0, 0.0], [0.4, 0.4]), TIMES)
    eb = time_varying_delta(v, m, intersect_tubes(full, do))
    assert eb.variant == "disturbance_only"
    assert np.all(eb.delta <= time_varying_delta(v, m, full).delta + 1e-15)


def test_forward_scope():
    v = vanderpol()
    m = linearize_at(v, np.array([1.0, 1.0]), TIMES)
    eb, _ = forward_delta(v, m, Box([1.0, 1.0], [0.3, 0.3]))
    eb.check_scope(np.array([1.2, 0.8]))
    with pytest.raises(ScopeError):
        eb.check_scope(np.array([1.5, 1.0]))


def test_on_nodes_holds_backward_and_forward():
    times = np.array([0.0, 1.0, 2.0])
    eb = ErrorBound(times, [[1.0], [2.0], [3.0]], {"direction": "backward"})
    assert np.allclose(eb.on_nodes([0.5, 1.0, 1.5]).ravel(), [1.0, 2.0, 2.0])
    eb = ErrorBound(times, [[1.0], [2.0], [3.0]], {"direction": "forward"})
    assert np.allclose(eb.on_nodes([0.5, 1.0, 1.5]).ravel(), [2.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        ErrorBound(times, [[-1.0], [0.0], [0.0]])


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(0.01, 0.4), st.floats(0.01, 0.4))
def test_box_delta_monotone_in_box(cx, cy, r, extra):
    v = vanderpol()
    c = np.array([cx, cy])
    small = box_delta(v, c - r, c + r, c)
    big = box_delta(v, c - r - extra, c + r + extra, c)
    assert np.all(big >= small)
