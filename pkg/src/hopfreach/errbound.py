"""Antagonistic linearization error bounds over tube boxes.

For a box X around the reference x_ref, component i of the drift remainder is
bounded by the Lagrange form

    delta_i = 1/2 sum_jk M_ijk r_j r_k,   M_ijk >= sup_X |d2 f_i / dx_j dx_k|,

with r_j = max_X |x_j - x_ref_j|. When a system supplies a direct remainder
enclosure the smaller of the two is kept. State-dependent input gains add
their own residual term.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tube import BoxTube, forward_tube

# relative pad so floating-point rounding never makes a bound optimistic
ROUND_PAD = 1e-9


class ScopeError(ValueError):
    pass


@dataclass
class ErrorBound:
    times: np.ndarray
    delta: np.ndarray
    provenance: dict = field(default_factory=dict)
    scope: tuple = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.delta = np.atleast_2d(np.asarray(self.delta, dtype=float))
        if np.any(self.delta < 0):
            raise ValueError("error bounds must be nonnegative")

    @property
    def variant(self):
        return self.provenance.get("variant", "constant")

    def on_nodes(self, times):
        """Deltas at the requested times.

        Between evaluated nodes a backward-tube bound uses the latest node at or
        before the query and a forward-tube bound the earliest node at or after
        it; both pick the larger of the two neighbouring boxes.
        """
        times = np.asarray(times, dtype=float)
        if self.times.size == 1:
            return np.repeat(self.delta[:1], times.size, axis=0)
        tol = 1e-9 * max(1.0, float(np.abs(self.times).max()))
        if self.provenance.get("direction", "backward") == "forward":
            idx = np.searchsorted(self.times, times - tol, side="left")
        else:
            idx = np.searchsorted(self.times, times + tol, side="right") - 1
        idx = np.clip(idx, 0, self.times.size - 1)
        return self.delta[idx]

    def check_scope(self, x):
        if self.scope is None:
            return
        lo, hi = self.scope
        x = np.asarray(x, dtype=float)
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise ScopeError("query state lies outside the box this error bound was built for")

    def zeroed(self):
        prov = dict(self.provenance, zeroed=True)
        return ErrorBound(self.times, np.zeros_like(self.delta), prov, self.scope)

    def scaled(self, factor):
        prov = dict(self.provenance, scale=factor)
        return ErrorBound(self.times, self.delta * factor, prov, self.scope)

    def to_csv(self, path):
        n = self.delta.shape[1]
        with open(path, "w") as fh:
            fh.write(",".join(["t"] + [f"delta{i}" for i in range(n)]) + "\n")
            for t, row in zip(self.times, self.delta):
                fh.write(",".join([f"{t:.10g}"] + [f"{v:.10g}" for v in row]) + "\n")


def box_delta(system, lo, hi, x_ref, U=None, D=None, u_ref=None, d_ref=None, t=0.0):
    """Componentwise bound on |f - l| over the box [lo, hi] and the input sets."""
    lo, hi = np.asarray(lo, float).copy(), np.asarray(hi, float).copy()
    x_ref = np.asarray(x_ref, float)
    if np.any(x_ref < lo) or np.any(x_ref > hi):
        warnings.warn("linearization reference outside the tube box; box inflated to include it",
                      stacklevel=2)
        lo, hi = np.minimum(lo, x_ref), np.maximum(hi, x_ref)
    U = system.U if U is None else U
    D = system.D if D is None else D
    r = np.maximum(np.abs(lo - x_ref), np.abs(hi - x_ref))
    M = system.hessian_bounds(lo, hi, t)
    delta = 0.5 * np.einsum("ijk,j,k->i", M, r, r)
    direct = system.remainder_bound(lo, hi, x_ref, t)
    if direct is not None:
        delta = np.minimum(delta, direct)
    delta = delta + system.gain_residual_bound(lo, hi, x_ref, U, D, u_ref, d_ref, t)
    return delta * (1.0 + ROUND_PAD) + np.where(delta > 0, 1e-15, 0.0)


def _node_refs(model, times):
    """Reference state/inputs of the model at the given times (nearest node)."""
    idx = np.clip(np.searchsorted(model.times, times - 1e-12), 0, model.nodes - 1)
    xr = model.x_ref[idx]
    ur = None if model.u_ref is None else model.u_ref[idx]
    dr = None if model.d_ref is None else model.d_ref[idx]
    return idx, xr, ur, dr


def _check_grid(model, tube):
    if model.nodes != tube.nodes or not np.allclose(model.times, tube.times):
        raise ValueError("model and tube must share a time grid")


def _local_boxes(tube: BoxTube):
    """Node box joined with the step enclosures on either side of it."""
    lo, hi = tube.lo.copy(), tube.hi.copy()
    if tube.nodes > 1:
        lo[:-1] = np.minimum(lo[:-1], tube.step_lo)
        hi[:-1] = np.maximum(hi[:-1], tube.step_hi)
        lo[1:] = np.minimum(lo[1:], tube.step_lo)
        hi[1:] = np.maximum(hi[1:], tube.step_hi)
    return lo, hi


def _variant_name(tube, requested):
    if not tube.control_active and requested == "time_varying":
        return "disturbance_only"
    return requested


def taylor_delta(system, model, tube, U=None, D=None):
    """Constant bound: one delta valid over the whole tube hull."""
    _check_grid(model, tube)
    lo, hi = tube.hull()
    deltas = []
    for k in range(model.nodes):
        lo_k = np.minimum(lo, model.x_ref[k])
        hi_k = np.maximum(hi, model.x_ref[k])
        ur = None if model.u_ref is None else model.u_ref[k]
        dr = None if model.d_ref is None else model.d_ref[k]
        deltas.append(box_delta(system, lo_k, hi_k, model.x_ref[k], U, D, ur, dr, model.times[k]))
    worst = np.max(deltas, axis=0)
    prov = {"variant": "constant", "tube": tube.mode, "direction": tube.mode,
            "control_active": tube.control_active, "model": model.label,
            "norm": "elementwise Lagrange remainder", "oracle": "analytic interval bounds"}
    return ErrorBound(model.times, np.tile(worst, (model.nodes, 1)), prov)


def time_varying_delta(system, model, tube, U=None, D=None):
    """Nodewise bound using only the boxes adjacent to each node."""
    _check_grid(model, tube)
    lo, hi = _local_boxes(tube)
    rows = []
    for k in range(model.nodes):
        ur = None if model.u_ref is None else model.u_ref[k]
        dr = None if model.d_ref is None else model.d_ref[k]
        rows.append(box_delta(system, lo[k], hi[k], model.x_ref[k], U, D, ur, dr, model.times[k]))
    prov = {"variant": _variant_name(tube, "time_varying"), "tube": tube.mode,
            "direction": tube.mode, "control_active": tube.control_active, "model": model.label,
            "norm": "elementwise Lagrange remainder", "oracle": "analytic interval bounds"}
    return ErrorBound(model.times, np.array(rows), prov)


def forward_delta(system, model, x0_box, control_active=True, U=None, D=None, time_varying=True):
    """Bound from the forward tube of x0_box; valid only for queries inside x0_box."""
    tube = forward_tube(system, x0_box, model.times, control_active, U, D)
    eb = time_varying_delta(system, model, tube, U, D) if time_varying else taylor_delta(
        system, model, tube, U, D)
    eb.provenance["variant"] = "forward"
    eb.provenance["disturbance_only"] = not control_active
    lo, hi = x0_box.bounds() if hasattr(x0_box, "bounds") else x0_box
    eb.scope = (np.asarray(lo, float), np.asarray(hi, float))
    return eb, tube


def intersect_tubes(a: BoxTube, b: BoxTube):
    """Nodewise intersection; both inputs must contain the set of interest."""
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    slo = np.maximum(a.step_lo, b.step_lo)
    shi = np.minimum(a.step_hi, b.step_hi)
    if np.any(lo > hi):
        raise ValueError("tubes do not overlap")
    return BoxTube(a.times, lo, hi, slo, shi, a.mode, a.control_active and b.control_active,
                   a.disturbance_active)
