"""Multi-agent Dubins pursuit-evasion in the evader's frame.

Each pursuer gets its own ellipsoidal capture target in the joint state, the
Avoid value of the joint game is the minimum over per-pursuer games, and the
error bound comes from the forward tube of the current state with the evader
holding its heading.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .convex import Box, QuadraticEllipsoid
from .dynamics import DubinsRelative, integrate, rk4_step
from .errbound import forward_delta
from .hopf import SolverConfig, make_game, solve_point
from .lintv import fundamental, linearize_along, propagate


@dataclass
class PursuitScenario:
    N: int = 5
    r_p: float = 3.0
    v_a: float = 3.0
    v_b: float = 3.0
    theta_a: float = -0.16
    capture_radius: float = 0.5
    theta_max: float = np.pi
    r_max: float = 20.0
    horizon: float = 1.0
    step: float = 0.02
    a_max: float = 2.0
    b_max: float = 0.5
    lapses: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        n = round(self.horizon / self.step)
        if abs(n * self.step - self.horizon) > 1e-9:
            raise ValueError("horizon must be a multiple of the step")
        for s in self.lapses:
            if not 0 < s <= self.horizon + 1e-12 or abs(round(s / self.step) * self.step - s) > 1e-9:
                raise ValueError(f"lapse {s} must be a grid node in (0, horizon]")

    @property
    def state_dim(self):
        return 3 * self.N

    def system(self):
        return DubinsRelative(self.N, self.v_a, self.v_b, self.a_max, self.b_max)

    def times(self):
        return np.linspace(0.0, self.horizon, round(self.horizon / self.step) + 1)

    def initial_state(self):
        x = np.empty((self.N, 3))
        for i in range(self.N):
            ang = i * 2 * np.pi / self.N + self.theta_a
            c, s = np.cos(ang), np.sin(ang)
            x[i, 0] = -s * self.r_p
            x[i, 1] = c * self.r_p
            x[i, 2] = ang - np.pi / 2
        return x.reshape(-1)

    def weight(self, i):
        w = np.empty((self.N, 3))
        w[:, :2] = self.r_max**2
        w[:, 2] = self.theta_max**2
        w[i, :2] = self.capture_radius**2
        return np.diag(w.reshape(-1))

    def targets(self):
        return [QuadraticEllipsoid(np.zeros(self.state_dim), self.weight(i)) for i in range(self.N)]

    def distances(self, x):
        x = np.asarray(x, float).reshape(np.shape(x)[:-1] + (self.N, 3))
        return np.hypot(x[..., 0], x[..., 1])


def scenario(N=5, theta_a=-0.16, **kw):
    return PursuitScenario(N=N, theta_a=theta_a, **kw)


@dataclass
class AvoidGames:
    """Per-pursuer Avoid games for one initial state over several lapses."""
    x0: np.ndarray
    times: np.ndarray
    model: object
    fund: object
    error: object
    tube: object
    specs: dict  # (pursuer, lapse) -> GameSpec
    lapses: tuple


def zero_action_reference(scn, x0, system=None):
    system = system or scn.system()
    times = scn.times()
    K = times.size
    return integrate(system, x0, np.zeros((K - 1, 1)), np.zeros((K - 1, scn.N)), times)


def build_avoid_games(scn, x0, lapses=None, solver=None, system=None, box_pad=1e-9):
    """Linearize about the evader's zero-action trajectory and build one Avoid
    game per (pursuer, lapse) with a forward, disturbance-only error bound."""
    system = system or scn.system()
    lapses = tuple(scn.lapses if lapses is None else lapses)
    x0 = np.asarray(x0, float)
    ref = zero_action_reference(scn, x0, system)
    model = linearize_along(system, ref, label="zero-action")
    fund = fundamental(model)
    start = Box(x0, np.full(x0.size, box_pad))
    eb, tube = forward_delta(system, model, start, control_active=False)
    solver = solver or SolverConfig()
    specs = {}
    for s in lapses:
        k = int(round(s / scn.step))
        for i, tgt in enumerate(scn.targets()):
            specs[(i, s)] = make_game("avoid", model, fund, tgt, system.U, system.D, eb, 0, k,
                                      solver, system, label=f"pursuer{i}@{s:g}")
    return AvoidGames(x0, model.times, model, fund, eb, tube, specs, lapses)


@dataclass
class DecomposedValue:
    value: float
    index: int
    lapse: float
    members: dict
    flags: list = field(default_factory=list)


def decomposed_avoid_value(games: AvoidGames, x=None, lapse=None, workers=1, warm=None):
    """min over pursuers (and the requested lapses) of the per-pursuer values."""
    x = games.x0 if x is None else np.asarray(x, float)
    keys = [k for k in games.specs if lapse is None or abs(k[1] - lapse) < 1e-12]
    if not keys:
        raise KeyError(f"no games for lapse {lapse}")

    def run(key):
        w = None if warm is None else warm.get(key)
        return key, solve_point(games.specs[key], x, w)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = dict(ex.map(run, keys))
    else:
        out = dict(map(run, keys))
    flags = []
    ok = {k: r for k, r in out.items() if r.converged}
    if len(ok) < len(out):
        warnings.warn(f"{len(out) - len(ok)} member solves did not converge; they are ignored",
                      stacklevel=2)
        flags.append("members_not_converged")
        if not ok:
            ok = out
    key = min(ok, key=lambda k: (ok[k].value, k))
    return DecomposedValue(ok[key].value, key[0], key[1], out, flags)


class HopfEvader:
    """Evasive feedback from the costates of an initial decomposed solve.

    In z coordinates the optimal costate of a linear game stays constant, so
    each member's costate gives a cheap lower bound on its value from any
    later node and state:  V >= -(J*(p) - z.p + integral of H(p)). The evader
    starts on the member that attains the decomposed minimum and applies the
    maximiser of its Hamiltonian. It only moves to another member when that
    member's bound falls below the held one by more than ``switch_margin``;
    the default never switches, which plays the certified open-loop plan.
    """

    def __init__(self, games: AvoidGames, value: DecomposedValue, switch_margin=np.inf):
        self.step = float(games.times[1] - games.times[0])
        self.U = next(iter(games.specs.values())).table.U
        self.switch_margin = float(switch_margin)
        self.start = (value.index, value.lapse)
        self.held = self.start
        self.members = {}
        for key, spec in games.specs.items():
            p = value.members[key].p_star
            tab = spec.table
            h = tab.hamiltonians(p, "avoid")
            dt = np.diff(tab.times)
            seg = 0.5 * dt * (h[:-1] + h[1:])
            tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
            q = np.einsum("kji,j->ki", tab.Psi, p)  # Psi_j^T p
            qa = tab.R1 @ p  # (K, m)
            self.members[key] = (float(spec.target.conjugate(p)), q, tail, qa)

    def reset(self):
        self.held = self.start

    def bounds(self, t, x):
        j = int(round(t / self.step))
        out = {}
        for key, (jstar, q, tail, qa) in self.members.items():
            if j < q.shape[0]:
                out[key] = -(jstar - float(x @ q[j]) + tail[j])
        return out

    def __call__(self, t, x):
        j = int(round(t / self.step))
        if j == 0:
            self.reset()
        b = self.bounds(t, x)
        if not b:
            return self.U.center.copy(), np.nan, None
        low = min(b, key=b.get)
        if self.held not in b or b[low] < b[self.held] - self.switch_margin:
            self.held = low
        act = self.members[self.held][3][j]
        return self.U.argmax(-act), min(b.values()), self.held


def mpc_pursuer_step(scn, model, state, horizon_steps, eps=None, iters=50, b_max=None):
    """Receding-horizon pursuer turn rates from the linear prediction.

    Minimises the summed squared pursuer distances over the horizon by
    projected gradient on the box of turn rates; ``eps`` (horizon, n) is
    injected into the prediction as a sampled linearization error.
    """
    N = scn.N
    b_max = scn.b_max if b_max is None else b_max
    H = int(horizon_steps)
    if H <= 0:
        return np.zeros(N)
    n = model.state_dim
    m = model.B1.shape[2]
    cols = H * N
    # base rollout plus one unit impulse per (interval, pursuer)
    X0 = np.broadcast_to(np.asarray(state, float), (cols + 1, n))
    d = np.zeros((H, cols + 1, N))
    for j in range(H):
        d[j, 1 + j * N + np.arange(N), np.arange(N)] = 1.0
    u = np.zeros((H, cols + 1, m))
    e = None if eps is None else np.broadcast_to(np.asarray(eps, float)[:, None, :], (H, cols + 1, n))
    traj = propagate(model, X0, u, d, e, 0, H)  # (H+1, cols+1, n)
    base = traj[1:, 0]  # (H, n)
    G = traj[1:, 1:] - base[:, None, :]  # (H, cols, n)
    pos = np.zeros(n, dtype=bool)
    pos[0::3] = pos[1::3] = True
    S = G[:, :, pos].transpose(0, 2, 1).reshape(-1, cols)  # rows: (time, position coord)
    r = base[:, pos].reshape(-1)
    L = 2.0 * np.linalg.norm(S, 2) ** 2 + 1e-12
    b = np.zeros(cols)
    for _ in range(iters):
        g = 2.0 * S.T @ (S @ b + r)
        b = np.clip(b - g / L, -b_max, b_max)
    return b[:N]


class MPCPursuers:
    """Pursuer team driven by ``mpc_pursuer_step`` with a sampled error."""

    def __init__(self, scn, error=None, horizon_steps=15, iters=50, seed=0, system=None):
        self.scn = scn
        self.system = system or scn.system()
        self.error = error
        self.H = horizon_steps
        self.iters = iters
        self.rng = np.random.default_rng(seed)

    def model_at(self, t, x, H):
        times = t + self.scn.step * np.arange(H + 1)
        ref = integrate(self.system, x, np.zeros((H, 1)), np.zeros((H, self.scn.N)), times)
        return linearize_along(self.system, ref, label="mpc")

    def __call__(self, t, x):
        remaining = int(round((self.scn.horizon - t) / self.scn.step))
        H = max(0, min(self.H, remaining))
        if H == 0:
            return np.zeros(self.scn.N)
        model = self.model_at(t, x, H)
        eps = None
        if self.error is not None:
            delta = self.error.on_nodes(model.times[:-1])
            eps = self.rng.uniform(-1.0, 1.0, delta.shape) * delta
        return mpc_pursuer_step(self.scn, model, x, H, eps, self.iters)


@dataclass
class GameTrace:
    times: np.ndarray
    states: np.ndarray
    a: np.ndarray
    b: np.ndarray
    certified: np.ndarray
    active: list
    captured: bool
    min_distance: float
    capture_time: float = None

    def to_csv(self, path):
        N = self.b.shape[1]
        head = ["t"] + [f"{c}{i}" for i in range(N) for c in ("x", "y", "th")] + ["a"] + \
               [f"b{i}" for i in range(N)] + ["certified", "active"]
        with open(path, "w") as fh:
            fh.write(",".join(head) + "\n")
            for k, t in enumerate(self.times):
                a = self.a[k] if k < len(self.a) else np.nan
                b = self.b[k] if k < len(self.b) else np.full(N, np.nan)
                c = self.certified[k] if k < len(self.certified) else np.nan
                act = self.active[k] if k < len(self.active) else ""
                row = [f"{t:.6g}"] + [f"{v:.10g}" for v in self.states[k]] + [f"{a:.10g}"] + \
                      [f"{v:.10g}" for v in b] + [f"{c:.10g}", str(act)]
                fh.write(",".join(row) + "\n")


def simulate(scn, evader_policy, pursuer_policy, seed=0, x0=None, substeps=4, system=None):
    """Nonlinear closed loop at the scenario step; capture checked on substeps."""
    system = system or scn.system()
    x = scn.initial_state() if x0 is None else np.asarray(x0, float)
    times = scn.times()
    states, As, Bs, cert, act = [x], [], [], [], []
    dmin = float(scn.distances(x).min())
    captured = dmin <= scn.capture_radius
    tcap = 0.0 if captured else None
    for k in range(times.size - 1):
        t = times[k]
        a, val, key = evader_policy(t, x)
        b = np.asarray(pursuer_policy(t, x), float)
        a = np.clip(np.atleast_1d(a), -scn.a_max, scn.a_max)
        b = np.clip(b, -scn.b_max, scn.b_max)
        h = (times[k + 1] - t) / substeps
        for s in range(substeps):
            x = rk4_step(system, x, a, b, t + s * h, h)
            dist = float(scn.distances(x).min())
            dmin = min(dmin, dist)
            if dist <= scn.capture_radius and not captured:
                captured, tcap = True, t + (s + 1) * h
        states.append(x)
        As.append(float(a[0]))
        Bs.append(b)
        cert.append(val)
        act.append(key)
    return GameTrace(times, np.array(states), np.array(As), np.array(Bs), np.array(cert), act,
                     captured, dmin, tcap)
