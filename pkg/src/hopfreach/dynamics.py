"""Control-affine systems  xdot = f_x(x) + h1(x) u + h2(x) d  and RK4 integration.

All evaluators broadcast over leading axes of ``x`` so Monte-Carlo batches and
grids can be pushed through in one call.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import interval as iv
from .convex import Box

FD_STEP = 1e-4


class IntegrationDiverged(RuntimeError):
    pass


class NonlinearSystem:
    """Base class. Subclasses supply drift and the two input gains.

    Derivatives default to central finite differences. Built-in systems
    override them with analytic forms together with interval enclosures
    (``field_bounds``) and Hessian magnitude bounds (``hessian_bounds``) that
    the tube and error-bound code rely on for rigor.
    """

    name = "system"
    state_dim = 1
    control_dim = 1
    disturbance_dim = 1
    lipschitz_hint = None

    def __init__(self, U=None, D=None):
        self.U = U if U is not None else Box(np.zeros(self.control_dim), np.zeros(self.control_dim))
        self.D = D if D is not None else Box(np.zeros(self.disturbance_dim), np.zeros(self.disturbance_dim))

    # --- model -----------------------------------------------------------
    def drift(self, x, t=0.0):
        raise NotImplementedError

    def control_gain(self, x, t=0.0):
        raise NotImplementedError

    def disturbance_gain(self, x, t=0.0):
        raise NotImplementedError

    def field(self, x, u, d, t=0.0):
        x = np.asarray(x, dtype=float)
        u = np.broadcast_to(np.asarray(u, dtype=float), x.shape[:-1] + (self.control_dim,))
        d = np.broadcast_to(np.asarray(d, dtype=float), x.shape[:-1] + (self.disturbance_dim,))
        g1 = self.control_gain(x, t)
        g2 = self.disturbance_gain(x, t)
        return (
            self.drift(x, t)
            + np.einsum("...ij,...j->...i", g1, u)
            + np.einsum("...ij,...j->...i", g2, d)
        )

    # --- derivatives -----------------------------------------------------
    def jacobian_x(self, x, u=None, d=None, t=0.0):
        x = np.asarray(x, dtype=float)
        u = np.zeros(self.control_dim) if u is None else u
        d = np.zeros(self.disturbance_dim) if d is None else d
        n = self.state_dim
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = FD_STEP
            cols.append((self.field(x + e, u, d, t) - self.field(x - e, u, d, t)) / (2 * FD_STEP))
        return np.stack(cols, axis=-1)

    def hessians_x(self, x, u=None, d=None, t=0.0):
        """Array G[..., i, j, k] = d^2 f_i / dx_j dx_k."""
        x = np.asarray(x, dtype=float)
        n = self.state_dim
        slabs = []
        for k in range(n):
            e = np.zeros(n)
            e[k] = FD_STEP
            slabs.append((self.jacobian_x(x + e, u, d, t) - self.jacobian_x(x - e, u, d, t)) / (2 * FD_STEP))
        return np.stack(slabs, axis=-1)

    # --- enclosures ------------------------------------------------------
    def field_bounds(self, lo, hi, ulo, uhi, dlo, dhi, t=0.0):
        """Enclosure of the field over a state box and input boxes.

        The generic fallback samples box vertices and the center, then pads by
        a Lipschitz-style margin; it is not rigorous, which is why every
        built-in system overrides it with interval arithmetic.
        """
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        lead = lo.shape[:-1]
        flo = np.full(lead + (self.state_dim,), np.inf)
        fhi = np.full(lead + (self.state_dim,), -np.inf)
        rng = np.random.default_rng(0)
        samples = 64
        for _ in range(samples):
            x = lo + (hi - lo) * rng.uniform(size=lo.shape)
            u = ulo + (uhi - ulo) * rng.integers(0, 2, size=np.shape(ulo))
            d = dlo + (dhi - dlo) * rng.integers(0, 2, size=np.shape(dlo))
            f = self.field(x, u, d, t)
            flo, fhi = np.minimum(flo, f), np.maximum(fhi, f)
        pad = 0.1 * (fhi - flo) + 1e-9
        return flo - pad, fhi + pad

    def hessian_bounds(self, lo, hi, t=0.0):
        """M[i, j, k] >= sup over the box of |G_ijk| (drift part).

        Fallback: dense sampling (17 points per axis when affordable) inflated
        by HESSIAN_SAFETY.
        """
        return sampled_hessian_bounds(self, lo, hi, t)

    def remainder_bound(self, lo, hi, xref, t=0.0):
        """Optional direct enclosure of |f_x(x) - f_x(xref) - Df_x(xref)(x - xref)|.

        Returns None when the system has no closed form; the Hessian bound is
        then the only estimate used.
        """
        return None

    def gain_residual_bound(self, lo, hi, xref, U, D, uref=None, dref=None, t=0.0):
        """Per-component sup of |(h1(x) - h1(xref))(u - uref) + (h2(x) - h2(xref))(d - dref)|.

        Zero for constant gains. Generic fallback enumerates box vertices,
        which is exact for gains affine in x.
        """
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        ulo, uhi = U.bounds()
        dlo, dhi = D.bounds()
        uref = U.center if uref is None else uref
        dref = D.center if dref is None else dref
        n = self.state_dim
        g1r = self.control_gain(xref, t)
        g2r = self.disturbance_gain(xref, t)
        verts = _box_vertices(lo, hi, limit=1024, seed=1)
        dg1 = self.control_gain(verts, t) - g1r
        dg2 = self.disturbance_gain(verts, t) - g2r
        if np.allclose(dg1, 0.0) and np.allclose(dg2, 0.0):
            return np.zeros(n)
        du = np.maximum(np.abs(ulo - uref), np.abs(uhi - uref))
        dd = np.maximum(np.abs(dlo - dref), np.abs(dhi - dref))
        val = np.abs(dg1) @ du + np.abs(dg2) @ dd
        return val.max(axis=0) * (1.0 if verts.shape[0] == 2**n else HESSIAN_SAFETY)


HESSIAN_SAFETY = 1.1


def _box_vertices(lo, hi, limit=1024, seed=0):
    n = lo.size
    if 2**n <= limit:
        pick = np.array(list(product([0, 1], repeat=n)), dtype=float)
    else:
        pick = np.random.default_rng(seed).integers(0, 2, size=(limit, n)).astype(float)
    return lo + (hi - lo) * pick


def sampled_hessian_bounds(system, lo, hi, t=0.0, per_axis=17, max_points=20000):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = lo.size
    if per_axis**n <= max_points:
        axes = [np.linspace(lo[i], hi[i], per_axis) for i in range(n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    else:
        pts = lo + (hi - lo) * np.random.default_rng(0).uniform(size=(max_points, n))
    G = system.hessians_x(pts, t=t)
    return HESSIAN_SAFETY * np.abs(G).max(axis=0)


class VanDerPol(NonlinearSystem):
    """xdot1 = x2, xdot2 = mu (1 - x1^2) x2 - x1 + u + d.

    ``literal_first_row=True`` swaps in xdot1 = x1 instead.
    """

    name = "vanderpol"
    state_dim = 2
    control_dim = 1
    disturbance_dim = 1

    def __init__(self, mu=1.0, u_max=1.0, d_max=0.5, literal_first_row=False):
        self.mu = float(mu)
        self.literal_first_row = bool(literal_first_row)
        super().__init__(Box([0.0], [u_max]), Box([0.0], [d_max]))

    def drift(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        first = x1 if self.literal_first_row else x2
        return np.stack([first, self.mu * (1.0 - x1**2) * x2 - x1], axis=-1)

    def control_gain(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.array([[0.0], [1.0]]), x.shape[:-1] + (2, 1))

    disturbance_gain = control_gain

    def jacobian_x(self, x, u=None, d=None, t=0.0):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        J = np.zeros(x.shape[:-1] + (2, 2))
        if self.literal_first_row:
            J[..., 0, 0] = 1.0
        else:
            J[..., 0, 1] = 1.0
        J[..., 1, 0] = -2.0 * self.mu * x1 * x2 - 1.0
        J[..., 1, 1] = self.mu * (1.0 - x1**2)
        return J

    def hessians_x(self, x, u=None, d=None, t=0.0):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        G = np.zeros(x.shape[:-1] + (2, 2, 2))
        G[..., 1, 0, 0] = -2.0 * self.mu * x2
        G[..., 1, 0, 1] = -2.0 * self.mu * x1
        G[..., 1, 1, 0] = -2.0 * self.mu * x1
        return G

    def field_bounds(self, lo, hi, ulo, uhi, dlo, dhi, t=0.0):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        x1 = (lo[..., 0], hi[..., 0])
        x2 = (lo[..., 1], hi[..., 1])
        first = x1 if self.literal_first_row else x2
        slo, shi = iv.square(*x1)
        plo, phi = iv.mul(1.0 - shi, 1.0 - slo, *x2)
        plo, phi = iv.scale(self.mu, plo, phi)
        f2lo, f2hi = iv.sub(plo, phi, *x1)
        f2lo = f2lo + ulo[0] + dlo[0]
        f2hi = f2hi + uhi[0] + dhi[0]
        return np.stack([first[0], f2lo], axis=-1), np.stack([first[1], f2hi], axis=-1)

    def hessian_bounds(self, lo, hi, t=0.0):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        M = np.zeros((2, 2, 2))
        M[1, 0, 0] = 2.0 * abs(self.mu) * iv.absmax(lo[1], hi[1])
        M[1, 0, 1] = M[1, 1, 0] = 2.0 * abs(self.mu) * iv.absmax(lo[0], hi[0])
        return M

    def remainder_bound(self, lo, hi, xref, t=0.0):
        # component 2 of f - l is exactly  -mu ((x1^2 - a^2) x2 - 2ab (x1 - a))
        # with (a, b) = xref. It is affine in x2, and for fixed x2 a quadratic
        # in x1, so its extremes over the box sit at x2 in {lo, hi} and x1 at
        # an end point or the vertex ab / x2.
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        a, b = float(xref[0]), float(xref[1])
        best = 0.0
        for x2 in (lo[1], hi[1]):
            cands = [lo[0], hi[0]]
            if x2 != 0.0:
                cands.append(min(max(a * b / x2, lo[0]), hi[0]))
            for x1 in cands:
                best = max(best, abs((x1 * x1 - a * a) * x2 - 2.0 * a * b * (x1 - a)))
        return np.array([0.0, abs(self.mu) * best])

    def gain_residual_bound(self, lo, hi, xref, U, D, uref=None, dref=None, t=0.0):
        return np.zeros(2)


class DubinsRelative(NonlinearSystem):
    """N pursuers in the frame of a central car.

    Per agent i: xdot = -v_a + v_b cos(th) + a y, ydot = v_b sin(th) - a x,
    thdot = b_i - a. Control is the central agent's turn rate a, disturbance
    the pursuer turn rates b.
    """

    name = "dubins"

    def __init__(self, N=5, v_a=3.0, v_b=3.0, a_max=1.0, b_max=1.0):
        if N < 1:
            raise ValueError("N must be at least 1")
        if v_a <= 0 or v_b <= 0:
            raise ValueError("speeds must be positive")
        self.N = int(N)
        self.v_a = float(v_a)
        self.v_b = float(v_b)
        self.state_dim = 3 * self.N
        self.control_dim = 1
        self.disturbance_dim = self.N
        super().__init__(Box([0.0], [a_max]), Box(np.zeros(self.N), np.full(self.N, b_max)))

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        b = x.reshape(x.shape[:-1] + (self.N, 3))
        return b[..., 0], b[..., 1], b[..., 2]

    def drift(self, x, t=0.0):
        px, py, th = self._split(x)
        out = np.stack([-self.v_a + self.v_b * np.cos(th), self.v_b * np.sin(th), np.zeros_like(th)], axis=-1)
        return out.reshape(np.shape(x))

    def control_gain(self, x, t=0.0):
        px, py, th = self._split(x)
        col = np.stack([py, -px, -np.ones_like(th)], axis=-1)
        return col.reshape(np.shape(x) + (1,))

    def disturbance_gain(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        G = np.zeros((self.state_dim, self.N))
        G[2::3, :] = np.eye(self.N)
        return np.broadcast_to(G, x.shape[:-1] + G.shape)

    def jacobian_x(self, x, u=None, d=None, t=0.0):
        x = np.asarray(x, dtype=float)
        a = 0.0 if u is None else np.asarray(u, dtype=float)[..., 0]
        px, py, th = self._split(x)
        lead = x.shape[:-1]
        J = np.zeros(lead + (self.state_dim, self.state_dim))
        for i in range(self.N):
            r = 3 * i
            J[..., r, r + 1] = a
            J[..., r, r + 2] = -self.v_b * np.sin(th[..., i])
            J[..., r + 1, r] = -a
            J[..., r + 1, r + 2] = self.v_b * np.cos(th[..., i])
        return J

    def hessians_x(self, x, u=None, d=None, t=0.0):
        x = np.asarray(x, dtype=float)
        px, py, th = self._split(x)
        n = self.state_dim
        G = np.zeros(x.shape[:-1] + (n, n, n))
        for i in range(self.N):
            r = 3 * i
            G[..., r, r + 2, r + 2] = -self.v_b * np.cos(th[..., i])
            G[..., r + 1, r + 2, r + 2] = -self.v_b * np.sin(th[..., i])
        return G

    def field_bounds(self, lo, hi, ulo, uhi, dlo, dhi, t=0.0):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        lead = lo.shape[:-1]
        L = lo.reshape(lead + (self.N, 3))
        H = hi.reshape(lead + (self.N, 3))
        alo, ahi = np.asarray(ulo)[0], np.asarray(uhi)[0]
        clo, chi = iv.cos(L[..., 2], H[..., 2])
        snlo, snhi = iv.sin(L[..., 2], H[..., 2])
        aylo, ayhi = iv.mul(alo, ahi, L[..., 1], H[..., 1])
        axlo, axhi = iv.mul(alo, ahi, L[..., 0], H[..., 0])
        fxlo = -self.v_a + self.v_b * clo + aylo
        fxhi = -self.v_a + self.v_b * chi + ayhi
        fylo = self.v_b * snlo - axhi
        fyhi = self.v_b * snhi - axlo
        ftlo = np.asarray(dlo) - ahi
        fthi = np.asarray(dhi) - alo
        flo = np.stack([fxlo, fylo, np.broadcast_to(ftlo, fxlo.shape)], axis=-1)
        fhi = np.stack([fxhi, fyhi, np.broadcast_to(fthi, fxhi.shape)], axis=-1)
        return flo.reshape(lo.shape), fhi.reshape(hi.shape)

    def hessian_bounds(self, lo, hi, t=0.0):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        n = self.state_dim
        M = np.zeros((n, n, n))
        for i in range(self.N):
            r = 3 * i
            clo, chi = iv.cos(lo[r + 2], hi[r + 2])
            slo, shi = iv.sin(lo[r + 2], hi[r + 2])
            M[r, r + 2, r + 2] = self.v_b * iv.absmax(clo, chi)
            M[r + 1, r + 2, r + 2] = self.v_b * iv.absmax(slo, shi)
        return M

    def gain_residual_bound(self, lo, hi, xref, U, D, uref=None, dref=None, t=0.0):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        xref = np.asarray(xref, float)
        ulo, uhi = U.bounds()
        uref = U.center if uref is None else np.asarray(uref)
        da = float(np.max(np.maximum(np.abs(ulo - uref), np.abs(uhi - uref))))
        dev = np.maximum(np.abs(lo - xref), np.abs(hi - xref)).reshape(self.N, 3)
        out = np.zeros((self.N, 3))
        out[:, 0] = da * dev[:, 1]
        out[:, 1] = da * dev[:, 0]
        return out.reshape(-1)


class LinearSystem(NonlinearSystem):
    """xdot = A x + B1 u + B2 d + c."""

    name = "linear"

    def __init__(self, A, B1, B2=None, c=None, U=None, D=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        n = self.A.shape[0]
        self.B1 = np.asarray(B1, dtype=float).reshape(n, -1)
        self.B2 = np.zeros((n, 1)) if B2 is None else np.asarray(B2, dtype=float).reshape(n, -1)
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float).reshape(n)
        self.state_dim = n
        self.control_dim = self.B1.shape[1]
        self.disturbance_dim = self.B2.shape[1]
        super().__init__(U, D)

    def drift(self, x, t=0.0):
        return np.asarray(x, dtype=float) @ self.A.T + self.c

    def control_gain(self, x, t=0.0):
        return np.broadcast_to(self.B1, np.shape(x)[:-1] + self.B1.shape)

    def disturbance_gain(self, x, t=0.0):
        return np.broadcast_to(self.B2, np.shape(x)[:-1] + self.B2.shape)

    def jacobian_x(self, x, u=None, d=None, t=0.0):
        return np.broadcast_to(self.A, np.shape(x)[:-1] + self.A.shape).copy()

    def hessians_x(self, x, u=None, d=None, t=0.0):
        n = self.state_dim
        return np.zeros(np.shape(x)[:-1] + (n, n, n))

    def field_bounds(self, lo, hi, ulo, uhi, dlo, dhi, t=0.0):
        flo, fhi = iv.matvec(self.A, lo, hi)
        glo, ghi = iv.matvec(self.B1, np.asarray(ulo, float), np.asarray(uhi, float))
        hlo, hhi = iv.matvec(self.B2, np.asarray(dlo, float), np.asarray(dhi, float))
        return flo + glo + hlo + self.c, fhi + ghi + hhi + self.c

    def hessian_bounds(self, lo, hi, t=0.0):
        n = self.state_dim
        return np.zeros((n, n, n))

    def gain_residual_bound(self, lo, hi, xref, U, D, uref=None, dref=None, t=0.0):
        return np.zeros(self.state_dim)


class CallableSystem(NonlinearSystem):
    """Wrap user callables; derivatives and enclosures use the generic fallbacks."""

    def __init__(self, drift, control_gain, disturbance_gain, state_dim, control_dim,
                 disturbance_dim, U=None, D=None, name="user"):
        self._drift = drift
        self._g1 = control_gain
        self._g2 = disturbance_gain
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.disturbance_dim = disturbance_dim
        self.name = name
        super().__init__(U, D)

    def drift(self, x, t=0.0):
        return self._drift(np.asarray(x, dtype=float), t)

    def control_gain(self, x, t=0.0):
        return self._g1(np.asarray(x, dtype=float), t)

    def disturbance_gain(self, x, t=0.0):
        return self._g2(np.asarray(x, dtype=float), t)


def vanderpol(mu=1.0, literal_first_row=False):
    return VanDerPol(mu=mu, literal_first_row=literal_first_row)


def dubins_relative(N=5, v_a=3.0, v_b=3.0, a_max=1.0, b_max=1.0):
    return DubinsRelative(N=N, v_a=v_a, v_b=v_b, a_max=a_max, b_max=b_max)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    disturbances: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if len(self.states) != len(self.times):
            raise ValueError("one state per time node required")
        if len(self.controls) != len(self.times) - 1:
            raise ValueError("one control per interval required")

    @property
    def final(self):
        return self.states[-1]


def _signal(sig, k, t, x, dim):
    if sig is None:
        return np.zeros(np.shape(x)[:-1] + (dim,))
    if callable(sig):
        return np.asarray(sig(t, x), dtype=float)
    sig = np.asarray(sig, dtype=float)
    if sig.ndim >= 2 or (sig.ndim == 1 and sig.size != dim):
        return sig[k]
    return sig


def rk4_step(system, x, u, d, t, h):
    k1 = system.field(x, u, d, t)
    k2 = system.field(x + 0.5 * h * k1, u, d, t + 0.5 * h)
    k3 = system.field(x + 0.5 * h * k2, u, d, t + 0.5 * h)
    k4 = system.field(x + h * k3, u, d, t + h)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(system, x0, u_signal, d_signal, time_grid):
    """Fixed-step RK4 with inputs held constant on each interval.

    Signals may be None (zero), a constant vector, an array indexed by
    interval, or a callable (t, x) -> input evaluated at the interval start.
    ``x0`` may carry a leading batch axis.
    """
    times = np.asarray(time_grid, dtype=float)
    if times.size < 2:
        raise ValueError("time grid needs at least two nodes")
    x = np.asarray(x0, dtype=float)
    states = [x]
    us, ds = [], []
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        u = _signal(u_signal, k, t, x, system.control_dim)
        d = _signal(d_signal, k, t, x, system.disturbance_dim)
        x = rk4_step(system, x, u, d, t, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(f"non-finite state at step {k} (t={times[k + 1]:.6g})")
        states.append(x)
        us.append(np.broadcast_to(u, x.shape[:-1] + (system.control_dim,)))
        ds.append(np.broadcast_to(d, x.shape[:-1] + (system.disturbance_dim,)))
    return Trajectory(times, np.array(states), np.array(us), np.array(ds))


def grid_for(lapse, step):
    """Uniform ascending grid over [0, lapse] with step no larger than ``step``."""
    n = max(1, int(np.ceil(lapse / step - 1e-9)))
    return np.linspace(0.0, lapse, n + 1)
