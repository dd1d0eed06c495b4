"""Interval box tubes over-approximating feasible sets.

Each step first finds an a-priori box B with X + [0, h] F(B) inside B (so B
holds every trajectory over the step), then lifts each face of X separately
using the field bound on the slab of B beyond that face, and also against
the plain Euler bound X + h F(B), keeping the tighter face.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .convex import Box


class TubeBlowup(RuntimeError):
    pass


@dataclass
class BoxTube:
    times: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    step_lo: np.ndarray
    step_hi: np.ndarray
    mode: str
    control_active: bool = True
    disturbance_active: bool = True

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise ValueError("tube box with lo > hi")

    @property
    def nodes(self):
        return self.times.size

    def box(self, k):
        return Box.from_bounds(self.lo[k], self.hi[k])

    def contains(self, k, x, tol=1e-12):
        x = np.asarray(x)
        return np.all((x >= self.lo[k] - tol) & (x <= self.hi[k] + tol), axis=-1)

    def hull(self):
        lo = np.minimum(self.lo.min(axis=0), self.step_lo.min(axis=0, initial=np.inf))
        hi = np.maximum(self.hi.max(axis=0), self.step_hi.max(axis=0, initial=-np.inf))
        return lo, hi

    def widths(self):
        return self.hi - self.lo

    def to_csv(self, path):
        n = self.lo.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"lo{i}" for i in range(n)] + [f"hi{i}" for i in range(n)])
            for k in range(self.nodes):
                w.writerow([f"{self.times[k]:.10g}"] + [f"{v:.10g}" for v in self.lo[k]]
                           + [f"{v:.10g}" for v in self.hi[k]])


def _input_bounds(cset, active):
    if not active:
        return cset.center.copy(), cset.center.copy()
    return cset.bounds()


def _step(field_bounds, lo, hi, h, max_rounds=20, inflation=1.1):
    """One guaranteed step of the inclusion xdot in F(x) from the box [lo, hi]."""
    n = lo.size
    blo, bhi = lo.copy(), hi.copy()
    for _ in range(max_rounds):
        flo, fhi = field_bounds(blo, bhi)
        clo = lo + h * np.minimum(flo, 0.0)
        chi = hi + h * np.maximum(fhi, 0.0)
        if np.all(clo >= blo) and np.all(chi <= bhi):
            break
        mid, rad = 0.5 * (clo + chi), 0.5 * (chi - clo)
        rad = inflation * rad + 1e-12 * (1.0 + np.abs(mid))
        blo = np.minimum(blo, mid - rad)
        bhi = np.maximum(bhi, mid + rad)
        if not (np.all(np.isfinite(blo)) and np.all(np.isfinite(bhi))):
            raise TubeBlowup("a-priori enclosure became non-finite")
    else:
        raise TubeBlowup("a-priori enclosure did not settle")
    # slabs beyond each face of the current box, inside the a-priori box
    slo = np.repeat(blo[None, :], 2 * n, axis=0)
    shi = np.repeat(bhi[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    slo[idx, idx] = hi
    shi[n + idx, idx] = lo
    flo, fhi = field_bounds(slo, shi)
    up = hi + h * np.maximum(fhi[idx, idx], 0.0)
    down = lo + h * np.minimum(flo[n + idx, idx], 0.0)
    # the whole-box field bound also moves faces inward when the flow is one-signed
    alo, ahi = field_bounds(blo, bhi)
    new_lo = np.maximum(np.maximum(down, lo + h * alo), blo)
    new_hi = np.minimum(np.minimum(up, hi + h * ahi), bhi)
    return new_lo, new_hi, blo, bhi


def _propagate(system, lo0, hi0, times, reverse, U, D, control_active, max_width):
    ulo, uhi = _input_bounds(U, control_active)
    dlo, dhi = _input_bounds(D, True)
    K = times.size
    n = lo0.size
    lo = np.empty((K, n))
    hi = np.empty((K, n))
    slo = np.empty((max(K - 1, 0), n))
    shi = np.empty((max(K - 1, 0), n))
    order = range(K - 1, 0, -1) if reverse else range(K - 1)
    start = K - 1 if reverse else 0
    lo[start], hi[start] = lo0, hi0
    for k in order:
        nxt = k - 1 if reverse else k + 1
        t = times[k]
        h = abs(times[nxt] - times[k])
        if reverse:
            def fb(a, b, t=t):
                flo, fhi = system.field_bounds(a, b, ulo, uhi, dlo, dhi, t)
                return -fhi, -flo
        else:
            def fb(a, b, t=t):
                return system.field_bounds(a, b, ulo, uhi, dlo, dhi, t)
        try:
            nlo, nhi, blo, bhi = _step(fb, lo[k], hi[k], h)
        except TubeBlowup as err:
            raise TubeBlowup(f"{err} at node {k} (t={t:.6g})") from None
        if np.any(nhi - nlo > max_width):
            raise TubeBlowup(f"tube width exceeded {max_width:g} at node {nxt}")
        lo[nxt], hi[nxt] = nlo, nhi
        j = min(k, nxt)
        slo[j], shi[j] = blo, bhi
    return lo, hi, slo, shi


def _as_bounds(box):
    if isinstance(box, tuple):
        return np.asarray(box[0], float), np.asarray(box[1], float)
    return box.bounds()


def backward_tube(system, target_box, time_grid, control_active=True, U=None, D=None,
                  max_width=1e6):
    """Boxes containing every state at tau_k that some admissible inputs steer into
    the target box at the last grid node."""
    U = system.U if U is None else U
    D = system.D if D is None else D
    times = np.asarray(time_grid, dtype=float)
    lo0, hi0 = _as_bounds(target_box)
    lo, hi, slo, shi = _propagate(system, lo0, hi0, times, True, U, D, control_active, max_width)
    return BoxTube(times, lo, hi, slo, shi, "backward", control_active, True)


def disturbance_only_tube(system, target_box, time_grid, U=None, D=None, max_width=1e6):
    """Backward tube with the control frozen at the center of U."""
    return backward_tube(system, target_box, time_grid, False, U, D, max_width)


def forward_tube(system, start_box, time_grid, control_active=True, U=None, D=None,
                 max_width=1e6):
    """Boxes containing every state reachable from the start box at each node."""
    U = system.U if U is None else U
    D = system.D if D is None else D
    times = np.asarray(time_grid, dtype=float)
    lo0, hi0 = _as_bounds(start_box)
    lo, hi, slo, shi = _propagate(system, lo0, hi0, times, False, U, D, control_active, max_width)
    return BoxTube(times, lo, hi, slo, shi, "forward", control_active, True)


def target_bounding_box(target):
    lo, hi = target.bounding_box()
    return Box.from_bounds(lo, hi)


def _random_inputs(rng, cset, shape, active=True):
    if not active:
        return np.broadcast_to(cset.center, shape + (cset.dim,)).copy()
    lo, hi = cset.bounds()
    # mix of bang-bang and uniform values
    bang = rng.integers(0, 2, size=shape + (cset.dim,))
    uni = rng.uniform(size=shape + (cset.dim,))
    pick = rng.uniform(size=shape + (1,)) < 0.5
    frac = np.where(pick, bang, uni)
    return lo + (hi - lo) * frac


def sample_backward_trajectories(system, target, time_grid, count, rng, control_active=True,
                                 switches=4, U=None, D=None):
    """Trajectories that end in the target at the last node.

    Terminal states are drawn inside the target and integrated backward with
    random piecewise-constant inputs, so every sample is an exact feasible
    trajectory (up to integration error). Returns states (K, count, n) and the
    inputs used on each interval.
    """
    from .dynamics import rk4_step

    U = system.U if U is None else U
    D = system.D if D is None else D
    times = np.asarray(time_grid, dtype=float)
    K = times.size
    x = target.sample(rng, count)
    seg = max(1, (K - 1) // switches)
    out = np.empty((K, count, system.state_dim))
    us = np.empty((K - 1, count, system.control_dim))
    ds = np.empty((K - 1, count, system.disturbance_dim))
    out[-1] = x
    u = d = None
    rev = _Reversed(system)
    for k in range(K - 1, 0, -1):
        if u is None or (K - 1 - k) % seg == 0:
            u = _random_inputs(rng, U, (count,), control_active)
            d = _random_inputs(rng, D, (count,))
        h = times[k] - times[k - 1]
        x = rk4_step(rev, x, u, d, -times[k], h)
        out[k - 1] = x
        us[k - 1], ds[k - 1] = u, d
    return out, us, ds


def sample_forward_trajectories(system, start, time_grid, count, rng, control_active=True,
                                switches=4, U=None, D=None):
    """Rollouts from states sampled in ``start`` (a set with .sample or a point)."""
    from .dynamics import rk4_step

    U = system.U if U is None else U
    D = system.D if D is None else D
    times = np.asarray(time_grid, dtype=float)
    K = times.size
    if hasattr(start, "sample"):
        x = start.sample(rng, count)
    else:
        x = np.broadcast_to(np.asarray(start, float), (count, system.state_dim)).copy()
    seg = max(1, (K - 1) // switches)
    out = np.empty((K, count, system.state_dim))
    us = np.empty((K - 1, count, system.control_dim))
    ds = np.empty((K - 1, count, system.disturbance_dim))
    out[0] = x
    u = d = None
    for k in range(K - 1):
        if u is None or k % seg == 0:
            u = _random_inputs(rng, U, (count,), control_active)
            d = _random_inputs(rng, D, (count,))
        x = rk4_step(system, x, u, d, times[k], times[k + 1] - times[k])
        out[k + 1] = x
        us[k], ds[k] = u, d
    return out, us, ds


class _Reversed:
    def __init__(self, system):
        self.system = system

    def field(self, x, u, d, t=0.0):
        return -self.system.field(x, u, d, -t)
