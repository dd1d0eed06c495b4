"""Linear time-varying models, fundamental matrices and Hamiltonian tables.

Time convention: a model lives on an ascending grid tau_0 < ... < tau_N. A
game solved over the node window [k0, k1] has terminal time tau_{k1}; the
transition Psi_k = Phi_{k1} Phi_k^{-1} maps the state at tau_k to terminal
coordinates, and z = Psi_{k0} x. This is the only place the time reversal is
applied.
"""

from dataclasses import dataclass, field

import numpy as np

from .convex import Box
from .dynamics import Trajectory, integrate


class InvalidReference(ValueError):
    pass


class IllConditionedTransition(RuntimeError):
    pass


@dataclass
class LinearTVModel:
    times: np.ndarray
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    c: np.ndarray
    x_ref: np.ndarray = None
    u_ref: np.ndarray = None
    d_ref: np.ndarray = None
    label: str = "model"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        K = self.times.size
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("model grid must be strictly ascending")
        for name in ("A", "B1", "B2", "c"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[0] != K:
                raise ValueError(f"{name} must have one entry per grid node")
            setattr(self, name, arr)
        n = self.A.shape[1]
        if self.A.shape[1:] != (n, n) or self.B1.shape[1] != n or self.B2.shape[1] != n or self.c.shape[1:] != (n,):
            raise ValueError("inconsistent model dimensions")

    @property
    def state_dim(self):
        return self.A.shape[1]

    @property
    def nodes(self):
        return self.times.size

    def evaluate(self, k, x, u, d):
        """Linear field at node k."""
        return x @ self.A[k].T + u @ self.B1[k].T + d @ self.B2[k].T + self.c[k]


def linearize_at(system, points, times, u_ref=None, d_ref=None, label="model"):
    """Taylor model about given reference states (one per node, or a single point)."""
    times = np.asarray(times, dtype=float)
    K = times.size
    pts = np.broadcast_to(np.asarray(points, dtype=float), (K, system.state_dim)).copy()
    u = system.U.center if u_ref is None else np.asarray(u_ref, dtype=float)
    d = system.D.center if d_ref is None else np.asarray(d_ref, dtype=float)
    u = np.broadcast_to(u, (K, system.control_dim))
    d = np.broadcast_to(d, (K, system.disturbance_dim))
    A = np.stack([system.jacobian_x(pts[k], u[k], d[k], times[k]) for k in range(K)])
    B1 = np.stack([system.control_gain(pts[k], times[k]) for k in range(K)])
    B2 = np.stack([system.disturbance_gain(pts[k], times[k]) for k in range(K)])
    f = np.stack([system.field(pts[k], u[k], d[k], times[k]) for k in range(K)])
    c = (
        f
        - np.einsum("kij,kj->ki", A, pts)
        - np.einsum("kij,kj->ki", B1, u)
        - np.einsum("kij,kj->ki", B2, d)
    )
    return LinearTVModel(times, A, B1, B2, c, pts, np.array(u), np.array(d), label)


def linearize_along(system, ref: Trajectory, tol=1e-6, label="model"):
    """Taylor model about a reference trajectory, which must solve the dynamics."""
    replay = integrate(system, ref.states[0], ref.controls, ref.disturbances, ref.times)
    scale = 1.0 + np.abs(ref.states).max()
    resid = np.abs(replay.states - ref.states).max()
    if resid > tol * scale:
        raise InvalidReference(f"reference trajectory residual {resid:.3g} exceeds tolerance")
    u = np.vstack([ref.controls, ref.controls[-1:]])
    d = np.vstack([ref.disturbances, ref.disturbances[-1:]])
    return linearize_at(system, ref.states, ref.times, u, d, label=label)


def from_linear_system(system, times, label="linear"):
    """Exact model of a LinearSystem (the Taylor model of itself)."""
    times = np.asarray(times, dtype=float)
    K = times.size
    return LinearTVModel(
        times,
        np.broadcast_to(system.A, (K,) + system.A.shape).copy(),
        np.broadcast_to(system.B1, (K,) + system.B1.shape).copy(),
        np.broadcast_to(system.B2, (K,) + system.B2.shape).copy(),
        np.broadcast_to(system.c, (K, system.state_dim)).copy(),
        np.zeros((K, system.state_dim)),
        label=label,
    )


@dataclass
class FundamentalSolution:
    times: np.ndarray
    Phi: np.ndarray
    PhiInv: np.ndarray
    conditioning: float

    def transition(self, k_to, k_from):
        """Psi(tau_to, tau_from) = Phi_to Phi_from^{-1}."""
        return self.Phi[k_to] @ self.PhiInv[k_from]


def fundamental(model: LinearTVModel, substeps=4, max_cond=1e12):
    """Integrate Phi' = A Phi, Phi(tau_0) = I with RK4 (A linear between nodes)."""
    n = model.state_dim
    K = model.nodes
    Phi = np.empty((K, n, n))
    Phi[0] = np.eye(n)
    for k in range(K - 1):
        h = (model.times[k + 1] - model.times[k]) / substeps
        A0, A1 = model.A[k], model.A[k + 1]
        P = Phi[k]
        for s in range(substeps):
            a = s / substeps
            Aa = (1 - a) * A0 + a * A1
            Am = (1 - a - 0.5 / substeps) * A0 + (a + 0.5 / substeps) * A1
            Ab = (1 - a - 1.0 / substeps) * A0 + (a + 1.0 / substeps) * A1
            k1 = Aa @ P
            k2 = Am @ (P + 0.5 * h * k1)
            k3 = Am @ (P + 0.5 * h * k2)
            k4 = Ab @ (P + h * k3)
            P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        Phi[k + 1] = P
    conds = np.linalg.cond(Phi)
    worst = float(conds.max())
    if not np.isfinite(worst) or worst > max_cond:
        k = int(np.nanargmax(np.where(np.isfinite(conds), conds, np.inf)))
        raise IllConditionedTransition(f"transition matrix condition {conds[k]:.3g} at node {k}")
    PhiInv = np.linalg.inv(Phi)
    return FundamentalSolution(model.times, Phi, PhiInv, worst)


def propagate(model: LinearTVModel, x0, u, d, eps=None, k0=0, steps=None, substeps=4):
    """Roll the linear model forward from node k0 with inputs held per interval.

    Matrices are interpolated linearly between nodes, as in ``fundamental``.
    ``x0`` may be batched (..., n); u, d and eps are indexed by interval
    first and broadcast against the batch. Returns states (steps+1, ..., n).
    """
    steps = model.nodes - 1 - k0 if steps is None else int(steps)
    if k0 + steps > model.nodes - 1:
        raise ValueError("propagation runs past the model grid")
    x = np.asarray(x0, dtype=float)
    out = [x]
    for j in range(steps):
        k = k0 + j
        h = (model.times[k + 1] - model.times[k]) / substeps
        uk, dk = np.asarray(u[j], float), np.asarray(d[j], float)
        ek = 0.0 if eps is None else np.asarray(eps[j], float)

        def field(a, y):
            A = (1 - a) * model.A[k] + a * model.A[k + 1]
            B1 = (1 - a) * model.B1[k] + a * model.B1[k + 1]
            B2 = (1 - a) * model.B2[k] + a * model.B2[k + 1]
            c = (1 - a) * model.c[k] + a * model.c[k + 1]
            return y @ A.T + uk @ B1.T + dk @ B2.T + c + ek

        for s in range(substeps):
            a0, am, a1 = s / substeps, (s + 0.5) / substeps, (s + 1) / substeps
            k1 = field(a0, x)
            k2 = field(am, x + 0.5 * h * k1)
            k3 = field(am, x + 0.5 * h * k2)
            k4 = field(a1, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x)
    return np.array(out)


def trapezoid_weights(times):
    times = np.asarray(times, dtype=float)
    if times.size == 1:
        return np.zeros(1)
    h = np.diff(times)
    w = np.zeros(times.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


@dataclass
class HamiltonianTable:
    """Node-sampled ingredients of the z-space Hamiltonian.

    R1_k = -B1^T Psi_k^T, R2_k = -B2^T Psi_k^T, E_k = -Psi_k^T and
    drift_k = Psi_k c_k, with Psi_k the transition to the window's end.
    """

    times: np.ndarray
    weights: np.ndarray
    Psi: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    E: np.ndarray
    drift: np.ndarray
    delta: np.ndarray
    U: object
    D: object
    z_map: np.ndarray
    window: tuple = (0, 0)
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return float(self.times[-1] - self.times[0])

    @property
    def state_dim(self):
        return self.z_map.shape[0]

    def to_z(self, x):
        return np.asarray(x, dtype=float) @ self.z_map.T

    def with_delta(self, delta):
        delta = np.broadcast_to(np.asarray(delta, dtype=float), self.drift.shape).copy()
        return HamiltonianTable(self.times, self.weights, self.Psi, self.R1, self.R2, self.E,
                                self.drift, delta, self.U, self.D, self.z_map, self.window,
                                dict(self.meta))

    def node_terms(self, mode):
        """Per node: list of (sign, set, matrix M) meaning sign * support(set, M p)."""
        out = []
        for k in range(self.times.size):
            err = Box(np.zeros(self.state_dim), self.delta[k])
            if mode == "reach":
                terms = [(1.0, self.U, self.R1[k]), (-1.0, self.D, -self.R2[k]), (-1.0, err, -self.E[k])]
            elif mode == "avoid":
                terms = [(1.0, self.D, self.R2[k]), (-1.0, self.U, -self.R1[k]), (1.0, err, self.E[k])]
            else:
                raise ValueError(f"unknown mode {mode!r}")
            out.append(terms)
        return out

    def hamiltonians(self, p, mode):
        """Integrand values per node, shape (K,) + p.shape[:-1]."""
        p = np.asarray(p, dtype=float)
        vals = []
        for k, terms in enumerate(self.node_terms(mode)):
            h = -(p @ self.drift[k])
            for sgn, s, M in terms:
                h = h + sgn * s.support(p @ M.T)
            vals.append(h)
        return np.array(vals)

    def integral(self, p, mode):
        return np.tensordot(self.weights, self.hamiltonians(p, mode), axes=(0, 0))


def hamiltonian_table(model: LinearTVModel, fund: FundamentalSolution, U, D, errbound=None,
                      k0=0, k1=None):
    """Tables for the game on the node window [k0, k1] (terminal time tau_{k1})."""
    K = model.nodes
    k1 = K - 1 if k1 is None else int(k1)
    k0 = int(k0)
    if not 0 <= k0 <= k1 < K:
        raise ValueError(f"invalid node window ({k0}, {k1})")
    idx = np.arange(k0, k1 + 1)
    Psi = np.einsum("ij,kjl->kil", fund.Phi[k1], fund.PhiInv[idx])
    PsiT = np.transpose(Psi, (0, 2, 1))
    R1 = -np.einsum("kji,kjl->kil", model.B1[idx], PsiT)
    R2 = -np.einsum("kji,kjl->kil", model.B2[idx], PsiT)
    E = -PsiT
    drift = np.einsum("kij,kj->ki", Psi, model.c[idx])
    n = model.state_dim
    if errbound is None:
        delta = np.zeros((idx.size, n))
    else:
        delta = errbound.on_nodes(model.times[idx])
    times = model.times[idx]
    meta = {"model": model.label}
    if errbound is not None:
        meta["error"] = errbound.provenance
    return HamiltonianTable(times, trapezoid_weights(times), Psi, R1, R2, E, drift, delta,
                            U, D, Psi[0], (k0, k1), meta)

