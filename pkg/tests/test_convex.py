import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hopfreach.convex import (Ball2, Box, Ellipsoid, NormBall, QuadraticEllipsoid, abs_max,
                              conjugate_target, support, support_argmax, support_terms)

vec2 = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=2, max_size=2).map(np.array)
ELL = Ellipsoid([0.0, 0.0], np.diag([1.0, 4.0]))


def test_support_examples():
    # [TRIVIAL]
    assert support(Box([0, 0], [1, 1]), [1.0, 0.0]) == pytest.approx(1.0)
    assert support(ELL, [0.0, 1.0]) == pytest.approx(2.0)
    assert support(Ball2([1.0, 0.0], 2.0), [0.0, 1.0]) == pytest.approx(2.0)


def test_argmax_examples():
    # [TRIVIAL]
    assert np.allclose(support_argmax(Box([0, 0], [1, 1]), [2.0, -0.5]), [1, -1])
    assert np.allclose(support_argmax(ELL, [0.0, 1.0]), [0, 2])
    # [DERIVED] Q p / sqrt(p^T Q p) with Q = diag(4, 1), p = (1, 1)
    e = Ellipsoid([0.0, 0.0], np.diag([4.0, 1.0]))
    assert np.allclose(support_argmax(e, [1.0, 1.0]), np.array([4.0, 1.0]) / np.sqrt(5.0))


def test_zero_direction_maps_to_center():
    assert np.allclose(support_argmax(Ball2([0.3, 0.1], 1.0), [0.0, 0.0]), [0.3, 0.1])
    assert np.allclose(support_argmax(ELL, [0.0, 0.0]), [0.0, 0.0])


def test_conjugate_examples():
    nb = NormBall([0.0, 0.0], 1.0)
    assert conjugate_target(nb, [0.6, 0.0]) == pytest.approx(1.0)
    assert conjugate_target(nb, [2.0, 0.0]) == np.inf
    qe = QuadraticEllipsoid.ball([0.0, 0.0], 1.0)
    assert conjugate_target(qe, [0.0, 0.0]) == pytest.approx(0.5)


def test_abs_max():
    assert np.allclose(abs_max(Box([1.0, -2.0], [0.5, 1.0])), [1.5, 3.0])


def test_invalid_sets():
    with pytest.raises(ValueError):
        Box([0, 0], [-1, 1])
    with pytest.raises(ValueError):
        Ellipsoid([0, 0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        NormBall([0.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(vec2, st.floats(0.0, 5.0))
def test_support_positively_homogeneous(p, a):
    for s in (Box([0.2, -0.1], [1.0, 0.5]), ELL, Ball2([0.0, 1.0], 0.7)):
        centred = support(s, a * p) - a * (p @ s.center)
        assert centred == pytest.approx(a * (support(s, p) - p @ s.center), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(vec2)
def test_argmax_attains_support_and_samples_below(p):
    rng = np.random.default_rng(0)
    for s in (Box([0.2, -0.1], [1.0, 0.5]), ELL, Ball2([0.0, 1.0], 0.7)):
        a = support_argmax(s, p)
        assert s.contains(a, tol=1e-9)
        assert p @ a == pytest.approx(support(s, p), abs=1e-9)
        assert np.all(s.sample(rng, 200) @ p <= support(s, p) + 1e-9)


@settings(max_examples=50, deadline=None)
@given(vec2, vec2)
def test_fenchel_young(x, p):
    for tgt in (QuadraticEllipsoid([0.1, -0.2], np.diag([0.5, 2.0])), NormBall([0.3, 0.0], 0.8)):
        assert tgt.value(x) + tgt.conjugate(p) >= x @ p - 1e-9


@settings(max_examples=50, deadline=None)
@given(vec2)
def test_quadratic_conjugate_is_attained(x):
    # J*(grad J(x)) = x . grad J(x) - J(x) for smooth convex J
    tgt = QuadraticEllipsoid([0.1, -0.2], np.diag([0.5, 2.0]))
    g = tgt.gradient(x)
    assert tgt.conjugate(g) == pytest.approx(x @ g - tgt.value(x), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(vec2, st.floats(0.05, 3.0))
def test_prox_conjugate_optimality(v, eta):
    # the prox point minimises J*(p) + |p - v|^2 / (2 eta); compare with perturbations
    rng = np.random.default_rng(1)
    for tgt in (QuadraticEllipsoid([0.1, -0.2], np.diag([0.5, 2.0])), NormBall([0.3, 0.0], 0.8)):
        p = tgt.prox_conjugate(v[None], np.array([eta]))[0]
        f = lambda q: tgt.conjugate(q) + np.sum((q - v) ** 2) / (2 * eta)
        best = f(p)
        for dq in rng.normal(scale=0.05, size=(20, 2)):
            assert best <= f(p + dq) + 1e-9


def test_support_terms_reconstruct_support():
    rng = np.random.default_rng(2)
    R = rng.normal(size=(2, 3))
    for s in (Box([0.2, -0.1], [1.0, 0.5]), ELL, Ball2([0.0, 1.0], 0.7), Box([0.0, 0.0], [0.0, 1.0])):
        lin, rows, coefs, norms = support_terms(s, R)
        for p in rng.normal(size=(20, 3)):
            val = lin @ p + coefs @ np.abs(rows @ p) + sum(c * np.linalg.norm(S @ p) for c, S in norms)
            assert val == pytest.approx(support(s, R @ p), abs=1e-9)
