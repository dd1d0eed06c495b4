"""Backward-reachability pipeline: tube, error bound, linear model, Hopf game."""

from dataclasses import dataclass

import numpy as np

from .dynamics import grid_for, rk4_step
from .errbound import intersect_tubes, taylor_delta, time_varying_delta
from .errors import ConfigError
from .hopf import SolverConfig, _solve_batch, make_game, synthesize_batch
from .lintv import fundamental, linearize_at
from .tube import backward_tube, disturbance_only_tube, target_bounding_box

VARIANTS = ("constant", "time_varying", "disturbance_only", "zero")


@dataclass
class BackwardStage:
    """Everything built for one target before any Hopf solve."""
    times: np.ndarray
    full: object        # full-input backward tube
    dist_only: object   # control frozen, intersected with the full tube

    def tube_for(self, variant):
        return self.dist_only if variant == "disturbance_only" else self.full


def backward_stage(system, target, lapse, step=0.005, U=None, D=None, within=None):
    """Tubes for a backward game on the grid [0, lapse].

    ``within`` is an optional stage for a superset target whose tubes are
    intersected in, so pieces of a target never get looser boxes than the
    whole.
    """
    times = grid_for(lapse, step)
    box = target_bounding_box(target)
    full = backward_tube(system, box, times, True, U, D)
    do = disturbance_only_tube(system, box, times, U, D)
    do = intersect_tubes(do, full)
    if within is not None:
        full = intersect_tubes(full, within.full)
        do = intersect_tubes(do, within.dist_only)
    return BackwardStage(times, full, do)


def error_for(system, model, stage, variant, U=None, D=None):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown error variant {variant!r}; choose from {VARIANTS}")
    if variant == "constant":
        return taylor_delta(system, model, stage.full, U, D)
    if variant == "zero":
        return taylor_delta(system, model, stage.full, U, D).zeroed()
    return time_varying_delta(system, model, stage.tube_for(variant), U, D)


def backward_game(system, target, mode, lapse, variant="constant", reference=None, step=0.005,
                  U=None, D=None, solver=None, stage=None, label=""):
    """Build the Hopf game for a backward Reach/Avoid problem.

    The Taylor model is taken about a fixed reference state, by default the
    target center. Returns (spec, stage, model).
    """
    U = system.U if U is None else U
    D = system.D if D is None else D
    stage = stage or backward_stage(system, target, lapse, step, U, D)
    ref = target.center if reference is None else np.asarray(reference, float)
    model = linearize_at(system, ref, stage.times, label=label or "model")
    fund = fundamental(model)
    eb = error_for(system, model, stage, variant, U, D)
    spec = make_game(mode, model, fund, target, U, D, eb, solver=solver or SolverConfig(),
                     system=system, label=label)
    return spec, stage, model


class ReachController:
    """Receding Hopf feedback for a backward Reach game.

    At node k the game on the tail window [k, K] is solved at the current
    state and its optimal control applied over the next interval. The
    window tables are built once and reused across rollouts.
    """

    def __init__(self, spec, model, fund):
        self.spec = spec
        self.model = model
        self.fund = fund
        self.K = model.nodes
        self._tails = {0: spec}

    def tail(self, k):
        if k not in self._tails:
            s = self.spec
            self._tails[k] = make_game("reach", self.model, self.fund, s.target, s.table.U,
                                       s.table.D, s.error, k0=k, k1=self.K - 1, solver=s.solver,
                                       system=s.system, label=f"{s.label}@tail{k}")
        return self._tails[k]

    def __call__(self, k, X):
        """Controls, worst-case disturbances and values for states X (P, n)."""
        spec = self.tail(k)
        res = _solve_batch(spec, np.atleast_2d(X))
        u, d = synthesize_batch(spec, res)
        return u, d, np.array([r.value for r in res])


def closed_loop_reach(system, controller, X0, rng, adversarial=0.5, substeps=4):
    """Nonlinear rollouts of the Reach feedback from states X0 (P, n).

    On each interval the disturbance is, per rollout, the worst case of the
    current linear game with probability ``adversarial`` and otherwise a
    random bang-bang or uniform sample from D. Returns the state history
    (K, P, n) and the per-node values seen by the controller.
    """
    X = np.atleast_2d(np.asarray(X0, float)).copy()
    times = controller.model.times
    D = controller.spec.table.D
    K = times.size
    hist = [X.copy()]
    vals = []
    for k in range(K - 1):
        u, dw, v = controller(k, X)
        vals.append(v)
        lo, hi = D.bounds()
        bang = lo + (hi - lo) * rng.integers(0, 2, size=dw.shape)
        uni = lo + (hi - lo) * rng.uniform(size=dw.shape)
        pick = rng.uniform(size=(X.shape[0], 1))
        d = np.where(pick < adversarial, dw, np.where(pick < 0.5 + adversarial / 2, bang, uni))
        h = (times[k + 1] - times[k]) / substeps
        for j in range(substeps):
            X = rk4_step(system, X, u, d, times[k] + j * h, h)
        hist.append(X.copy())
    return np.array(hist), np.array(vals)
