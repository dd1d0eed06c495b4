"""Convex input sets and target functions.

Input sets carry closed-form support functions and maximizers; targets carry
their terminal cost J and its convex conjugate. Everything is vectorized over
leading axes of the direction/costate argument.
"""

from dataclasses import dataclass, field

import numpy as np

INF = np.inf


def _vec(a):
    return np.atleast_1d(np.asarray(a, dtype=float))


def _unit_scale(p):
    # direction only matters; rescale so tiny costates do not underflow
    p = np.asarray(p, dtype=float)
    m = np.max(np.abs(p), axis=-1, keepdims=True)
    return p / np.where(m > 0, m, 1.0)


def _spd(shape, name):
    shape = np.atleast_2d(np.asarray(shape, dtype=float))
    if shape.shape[0] != shape.shape[1]:
        raise ValueError(f"{name} must be square, got {shape.shape}")
    if not np.allclose(shape, shape.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(shape)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"{name} must be positive definite") from err
    return shape


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_widths: np.ndarray

    def __post_init__(self):
        c, h = _vec(self.center), _vec(self.half_widths)
        if c.shape != h.shape:
            raise ValueError("center and half_widths must have the same length")
        if np.any(h < 0):
            raise ValueError("half_widths must be nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", h)

    @classmethod
    def from_bounds(cls, lo, hi):
        lo, hi = _vec(lo), _vec(hi)
        return cls(0.5 * (lo + hi), 0.5 * (hi - lo))

    @property
    def dim(self):
        return self.center.size

    def bounds(self):
        return self.center - self.half_widths, self.center + self.half_widths

    def support(self, p):
        p = np.asarray(p, dtype=float)
        return p @ self.center + np.abs(p) @ self.half_widths

    def argmax(self, p):
        p = np.asarray(p, dtype=float)
        return self.center + self.half_widths * np.sign(p)

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return np.all(np.abs(x - self.center) <= self.half_widths + tol, axis=-1)

    def sample(self, rng, size):
        return self.center + self.half_widths * rng.uniform(-1.0, 1.0, size=(size, self.dim))

    def recentered(self):
        """Same set with the center moved to the origin."""
        return Box(np.zeros_like(self.center), self.half_widths)

    def point(self):
        """Degenerate set holding only the center."""
        return Box(self.center, np.zeros_like(self.half_widths))

    def scaled(self, factor):
        return Box(self.center, self.half_widths * factor)


@dataclass(frozen=True)
class Ball2:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def support(self, p):
        p = np.asarray(p, dtype=float)
        return p @ self.center + self.radius * np.linalg.norm(p, axis=-1)

    def argmax(self, p):
        p = _unit_scale(p)
        nrm = np.linalg.norm(p, axis=-1, keepdims=True)
        safe = np.where(nrm > 0, nrm, 1.0)
        return self.center + self.radius * np.where(nrm > 0, p / safe, 0.0)

    def contains(self, x, tol=1e-12):
        return np.linalg.norm(np.asarray(x) - self.center, axis=-1) <= self.radius + tol

    def sample(self, rng, size):
        g = rng.standard_normal((size, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = self.radius * rng.uniform(0, 1, size=(size, 1)) ** (1.0 / self.dim)
        return self.center + rad * g

    def point(self):
        return Ball2(self.center, 0.0)

    def scaled(self, factor):
        return Ball2(self.center, self.radius * factor)


@dataclass(frozen=True)
class Ellipsoid:
    """{c + v : v^T shape^{-1} v <= 1}."""

    center: np.ndarray
    shape: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = _vec(self.center)
        s = _spd(self.shape, "shape")
        if s.shape[0] != c.size:
            raise ValueError("shape does not match center")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", s)
        object.__setattr__(self, "_chol", np.linalg.cholesky(s))

    @property
    def dim(self):
        return self.center.size

    def bounds(self):
        ext = np.sqrt(np.diag(self.shape))
        return self.center - ext, self.center + ext

    def support(self, p):
        p = np.asarray(p, dtype=float)
        quad = np.einsum("...i,ij,...j->...", p, self.shape, p)
        return p @ self.center + np.sqrt(np.maximum(quad, 0.0))

    def argmax(self, p):
        p = _unit_scale(p)
        sp = p @ self.shape
        nrm = np.sqrt(np.maximum(np.sum(sp * p, axis=-1, keepdims=True), 0.0))
        safe = np.where(nrm > 0, nrm, 1.0)
        return self.center + np.where(nrm > 0, sp / safe, 0.0)

    def contains(self, x, tol=1e-12):
        v = np.asarray(x) - self.center
        w = np.linalg.solve(self.shape, np.moveaxis(np.atleast_2d(v), -1, 0))
        q = np.sum(np.moveaxis(w, 0, -1) * np.atleast_2d(v), axis=-1)
        return (q <= 1.0 + tol).reshape(np.shape(x)[:-1])

    def sample(self, rng, size):
        unit = Ball2(np.zeros(self.dim), 1.0).sample(rng, size)
        return self.center + unit @ self._chol.T

    @property
    def chol(self):
        return self._chol

    def point(self):
        return Box(self.center, np.zeros(self.dim))

    def scaled(self, factor):
        return Ellipsoid(self.center, self.shape * factor**2)


ConvexInputSet = Box | Ball2 | Ellipsoid


def support(cset, p):
    """sup over c in cset of p . c."""
    return cset.support(p)


def support_argmax(cset, p):
    """A maximizer of p . c over cset; zero directions map to the center."""
    return cset.argmax(p)


def abs_max(cset):
    """Componentwise max |c_j| over the set."""
    lo, hi = cset.bounds()
    return np.maximum(np.abs(lo), np.abs(hi))


def support_terms(cset, R):
    """Write p -> support(cset, R p) as lin . p + sum a |g . p| + sum b ||S p||.

    Returns (lin, abs_rows, abs_coefs, norm_terms) where norm_terms is a list of
    (coef, S) pairs for genuinely multi-dimensional round sets.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    lin = R.T @ cset.center
    if isinstance(cset, Box):
        keep = cset.half_widths > 0
        return lin, R[keep], cset.half_widths[keep], []
    if isinstance(cset, Ball2):
        if cset.radius == 0:
            return lin, R[:0], np.zeros(0), []
        if cset.dim == 1:
            return lin, R, np.array([cset.radius]), []
        return lin, R[:0], np.zeros(0), [(cset.radius, R)]
    if isinstance(cset, Ellipsoid):
        S = cset.chol.T @ R
        if cset.dim == 1:
            return lin, S, np.array([1.0]), []
        return lin, R[:0], np.zeros(0), [(1.0, S)]
    raise TypeError(f"unsupported set type {type(cset).__name__}")


@dataclass(frozen=True)
class QuadraticEllipsoid:
    """J(x) = 1/2 ((x - c)^T Q^{-1} (x - c) - 1)."""

    center: np.ndarray
    shape: np.ndarray
    _inv: np.ndarray = field(init=False, repr=False, compare=False)
    _eig: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = _vec(self.center)
        q = _spd(self.shape, "target shape")
        if q.shape[0] != c.size:
            raise ValueError("target shape does not match center")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", q)
        object.__setattr__(self, "_inv", np.linalg.inv(q))
        object.__setattr__(self, "_eig", np.linalg.eigh(q))

    @classmethod
    def ball(cls, center, radius):
        center = _vec(center)
        return cls(center, radius**2 * np.eye(center.size))

    @property
    def dim(self):
        return self.center.size

    @property
    def shape_inv(self):
        return self._inv

    def value(self, x):
        v = np.asarray(x, dtype=float) - self.center
        return 0.5 * (np.einsum("...i,ij,...j->...", v, self._inv, v) - 1.0)

    def gradient(self, x):
        return (np.asarray(x, dtype=float) - self.center) @ self._inv

    def conjugate(self, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", p, self.shape, p) + p @ self.center + 0.5

    def conjugate_grad(self, p):
        return np.asarray(p) @ self.shape + self.center

    def prox_conjugate(self, v, eta):
        """argmin_p J*(p) + |p - v|^2 / (2 eta), batched over rows of v."""
        lam, V = self._eig
        eta = np.asarray(eta, dtype=float)[..., None]
        w = (v - eta * self.center) @ V
        return (w / (eta * lam + 1.0)) @ V.T

    def bounding_box(self):
        ext = np.sqrt(np.diag(self.shape))
        return self.center - ext, self.center + ext

    def contains(self, x):
        return self.value(x) <= 0.0

    def min_value(self):
        return -0.5

    def lapse_zero_costate(self, z):
        """Minimizer of J*(p) - z.p (the costate of the zero-horizon problem)."""
        return (np.asarray(z) - self.center) @ self._inv

    def sample(self, rng, size):
        return Ellipsoid(self.center, self.shape).sample(rng, size)


@dataclass(frozen=True)
class NormBall:
    """J(x) = ||x - c||_2 - r."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("target radius must be positive")
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    def value(self, x):
        return np.linalg.norm(np.asarray(x, dtype=float) - self.center, axis=-1) - self.radius

    def conjugate(self, p):
        p = np.asarray(p, dtype=float)
        val = p @ self.center + self.radius
        return np.where(np.linalg.norm(p, axis=-1) <= 1.0 + 1e-12, val, INF)

    def prox_conjugate(self, v, eta):
        eta = np.asarray(eta, dtype=float)[..., None]
        w = v - eta * self.center
        nrm = np.linalg.norm(w, axis=-1, keepdims=True)
        return np.where(nrm > 1.0, w / np.where(nrm > 0, nrm, 1.0), w)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def contains(self, x):
        return self.value(x) <= 0.0

    def min_value(self):
        return -self.radius

    def lapse_zero_costate(self, z):
        v = np.asarray(z, dtype=float) - self.center
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        return np.where(nrm > 0, v / np.where(nrm > 0, nrm, 1.0), 0.0)

    def sample(self, rng, size):
        return Ball2(self.center, self.radius).sample(rng, size)


TargetSpec = QuadraticEllipsoid | NormBall


def conjugate_target(tgt, p):
    """Fenchel conjugate J*(p); +inf outside the conjugate domain."""
    return tgt.conjugate(p)
