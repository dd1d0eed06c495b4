"""Grid dynamic-programming oracle for two-dimensional games.

Solves  psi_s = H(x, grad psi),  psi(x, 0) = J(x)  in the lapse s = T - t, with
the game Hamiltonian H = min_u max_d p.f (Reach) or max_u min_d p.f (Avoid).
Space: second-order ENO differences with local Lax-Friedrichs dissipation.
Time: TVD Runge-Kutta 2 under a CFL bound. Ghost cells use linear
extrapolation.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GHOST = 2


class UnsupportedDimension(ValueError):
    pass


class QueryOutOfRange(ValueError):
    pass


@dataclass
class GridSpec:
    lo: tuple = (-3.0, -3.0)
    hi: tuple = (3.0, 3.0)
    nodes: tuple = (101, 101)

    def axes(self):
        return [np.linspace(self.lo[i], self.hi[i], self.nodes[i]) for i in range(2)]

    @property
    def spacing(self):
        return tuple((self.hi[i] - self.lo[i]) / (self.nodes[i] - 1) for i in range(2))

    def points(self):
        ax = self.axes()
        X, Y = np.meshgrid(ax[0], ax[1], indexing="ij")
        return np.stack([X, Y], axis=-1).reshape(-1, 2)


@dataclass
class DPGrid:
    spec: GridSpec
    lapses: np.ndarray
    values: np.ndarray  # (len(lapses), nx, ny)
    mode: str
    cfl: float
    steps: int = 0
    dissipation: str = "local"
    meta: dict = field(default_factory=dict)

    def slice(self, lapse):
        k = int(np.argmin(np.abs(self.lapses - lapse)))
        if abs(self.lapses[k] - lapse) > 1e-9:
            raise KeyError(f"lapse {lapse} not stored (have {list(self.lapses)})")
        return self.values[k]

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(path.with_suffix(".npz"), lapses=self.lapses, values=self.values)
        info = {"lo": list(self.spec.lo), "hi": list(self.spec.hi), "nodes": list(self.spec.nodes),
                "mode": self.mode, "cfl": self.cfl, "steps": self.steps,
                "dissipation": self.dissipation, "meta": self.meta, "format": 1}
        path.with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        info = json.loads(path.with_suffix(".json").read_text())
        data = np.load(path.with_suffix(".npz"))
        spec = GridSpec(tuple(info["lo"]), tuple(info["hi"]), tuple(info["nodes"]))
        return cls(spec, data["lapses"], data["values"], info["mode"], info["cfl"], info["steps"],
                   info.get("dissipation", "local"), info.get("meta", {}))


def _pad(v):
    """Two ghost layers per side by linear extrapolation."""
    out = np.pad(v, GHOST, mode="constant")
    g = GHOST
    nx, ny = v.shape
    for i in range(g):
        out[g - 1 - i, g:-g] = 2 * out[g - i, g:-g] - out[g - i + 1, g:-g]
        out[g + nx + i, g:-g] = 2 * out[g + nx + i - 1, g:-g] - out[g + nx + i - 2, g:-g]
    for j in range(g):
        out[:, g - 1 - j] = 2 * out[:, g - j] - out[:, g - j + 1]
        out[:, g + ny + j] = 2 * out[:, g + ny + j - 1] - out[:, g + ny + j - 2]
    return out


def _eno2(vp, h, axis):
    """One-sided second-order ENO derivatives along an axis of a padded array."""
    d1 = np.diff(vp, axis=axis) / h  # between nodes
    d2 = np.diff(d1, axis=axis) / h  # at interior nodes
    g = GHOST
    n = vp.shape[axis] - 2 * g

    def take(a, start, count):
        return np.take(a, np.arange(start, start + count), axis=axis)

    # node i (padded index g + i): backward difference d1[g+i-1], forward d1[g+i]
    bwd = take(d1, g - 1, n)
    fwd = take(d1, g, n)
    # second differences at nodes i-1, i, i+1 (d2 index j is node j+1)
    c_im1 = take(d2, g - 2, n)
    c_i = take(d2, g - 1, n)
    c_ip1 = take(d2, g, n)
    corr_m = np.where(np.abs(c_im1) < np.abs(c_i), c_im1, c_i)
    corr_p = np.where(np.abs(c_i) < np.abs(c_ip1), c_i, c_ip1)
    pm = bwd + 0.5 * h * corr_m
    pp = fwd - 0.5 * h * corr_p
    if axis == 0:
        return pm[:, g:-g], pp[:, g:-g]
    return pm[g:-g, :], pp[g:-g, :]


def _game_hamiltonian(system, X, P, mode, U, D):
    fx = system.drift(X)
    g1 = system.control_gain(X)
    g2 = system.disturbance_gain(X)
    q1 = np.einsum("...i,...ij->...j", P, g1)
    q2 = np.einsum("...i,...ij->...j", P, g2)
    base = np.einsum("...i,...i->...", P, fx)
    if mode == "reach":
        return base - U.support(-q1) + D.support(q2)
    return base + U.support(q1) - D.support(-q2)


def _speed_bounds(system, X, U, D):
    fx = np.abs(system.drift(X))
    g1 = np.abs(system.control_gain(X))
    g2 = np.abs(system.disturbance_gain(X))
    um = np.maximum(np.abs(U.bounds()[0]), np.abs(U.bounds()[1]))
    dm = np.maximum(np.abs(D.bounds()[0]), np.abs(D.bounds()[1]))
    return fx + g1 @ um + g2 @ dm


def dp_solve(system, target, mode, grid=None, lapses=(0.26,), U=None, D=None, cfl=0.9,
             dissipation="local"):
    """March the lapse forward and store the value at each requested lapse."""
    if system.state_dim != 2:
        raise UnsupportedDimension("the grid oracle only supports two-dimensional systems")
    if mode not in ("reach", "avoid"):
        raise ValueError(f"unknown mode {mode!r}")
    if cfl > 0.9:
        raise ValueError("CFL number above 0.9")
    grid = grid or GridSpec()
    U = system.U if U is None else U
    D = system.D if D is None else D
    ax = grid.axes()
    hx, hy = grid.spacing
    X = np.stack(np.meshgrid(ax[0], ax[1], indexing="ij"), axis=-1)
    alpha = _speed_bounds(system, X, U, D)
    if dissipation == "global":
        alpha = np.broadcast_to(alpha.reshape(-1, 2).max(axis=0), alpha.shape)
    ax_, ay_ = alpha[..., 0], alpha[..., 1]
    dt_max = cfl / max(float((ax_ / hx + ay_ / hy).max()), 1e-12)

    def rhs(v):
        vp = _pad(v)
        pxm, pxp = _eno2(vp, hx, 0)
        pym, pyp = _eno2(vp, hy, 1)
        P = np.stack([0.5 * (pxm + pxp), 0.5 * (pym + pyp)], axis=-1)
        H = _game_hamiltonian(system, X, P, mode, U, D)
        # psi_s = H;  written as psi_s + Hhat = 0 with Hhat = -H
        return H + 0.5 * ax_ * (pxp - pxm) + 0.5 * ay_ * (pyp - pym)

    v = target.value(X)
    want = sorted(float(s) for s in lapses)
    out = []
    s = 0.0
    steps = 0
    for goal in want:
        while s < goal - 1e-12:
            dt = min(dt_max, goal - s)
            v1 = v + dt * rhs(v)
            v = 0.5 * (v + v1 + dt * rhs(v1))
            s += dt
            steps += 1
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"DP value became non-finite at lapse {s:.4g}")
        out.append(v.copy())
    return DPGrid(grid, np.array(want), np.array(out), mode, cfl, steps, dissipation,
                  {"system": system.name})


def dp_query(dp: DPGrid, x, lapse=None, values=None):
    """Bilinear interpolation of a stored slice at states x (..., 2)."""
    V = dp.slice(lapse) if values is None else values
    x = np.asarray(x, dtype=float)
    lo = np.asarray(dp.spec.lo)
    hi = np.asarray(dp.spec.hi)
    tol = 1e-9 * (hi - lo)
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise QueryOutOfRange("query outside the DP grid")
    h = np.asarray(dp.spec.spacing)
    nodes = np.asarray(dp.spec.nodes)
    f = np.clip((x - lo) / h, 0, nodes - 1)
    i = np.minimum(np.floor(f).astype(int), nodes - 2)
    t = f - i
    i0, i1 = i[..., 0], i[..., 1]
    t0, t1 = t[..., 0], t[..., 1]
    return ((1 - t0) * (1 - t1) * V[i0, i1] + t0 * (1 - t1) * V[i0 + 1, i1]
            + (1 - t0) * t1 * V[i0, i1 + 1] + t0 * t1 * V[i0 + 1, i1 + 1])


def dp_gradient_norm(dp: DPGrid, lapse, x):
    """|grad V| at x from centered differences on the stored slice."""
    V = dp.slice(lapse)
    hx, hy = dp.spec.spacing
    gx, gy = np.gradient(V, hx, hy)
    G = np.hypot(gx, gy)
    return dp_query(dp, x, values=G)
