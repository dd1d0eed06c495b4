"""Acceptance criteria, each at its stated tolerance.

Oracles: the grid DP solver (criteria 1-5, 10), closed-form values (7),
nonlinear rollouts (6, 8) and Monte-Carlo feasible trajectories (9). DP
solves are shared between tests through a session cache.
"""

import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from hopfreach import config as cfgmod
from hopfreach.audit import audit, level_set_hausdorff, ordering_violations
from hopfreach.baseline_dp import GridSpec, dp_query, dp_solve
from hopfreach.cli import build_reachset, make_system, make_target, run_pursuit
from hopfreach.convex import Box, NormBall
from hopfreach.dynamics import LinearSystem
from hopfreach.game import build_avoid_games, scenario
from hopfreach.hopf import make_game, solve_grid
from hopfreach.lintv import from_linear_system, fundamental
from hopfreach.pipeline import ReachController, backward_game, closed_loop_reach
from hopfreach.tube import sample_backward_trajectories, sample_forward_trajectories

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SUITE = {"B": "vdp_reach.toml", "S": "vdp_reach_offcenter.toml"}


def load(name, **changes):
    cfg = cfgmod.load(CONFIGS / name)
    for key, value in changes.items():
        obj = cfg
        *path, last = key.split(".")
        for p in path:
            obj = getattr(obj, p)
        setattr(obj, last, value)
    return cfgmod.validate(cfg)


@lru_cache(maxsize=None)
def oracle(name, mode):
    """DP value on the configured oracle grid, solved once per (config, mode)."""
    cfg = load(name)
    system = make_system(cfg.system)
    target = make_target(cfg.target, 2)
    grid = GridSpec(tuple(cfg.grid.lo), tuple(cfg.grid.hi), tuple(cfg.dp.nodes))
    return dp_solve(system, target, mode, grid, [cfg.lapse], cfl=cfg.dp.cfl,
                    dissipation=cfg.dp.dissipation)


@lru_cache(maxsize=None)
def reachset(name, mode="reach", variant=None, envelope=None):
    changes = {"mode": mode}
    if variant:
        changes["error.variant"] = variant
    cfg = load(name, **changes) if envelope is None else load(envelope, **changes)
    return cfg, build_reachset(cfg)


def audited(name, mode="reach", variant=None, envelope=None):
    cfg, res = reachset(name, mode, variant, envelope)
    h = max((a[-1] - a[0]) / (len(a) - 1) for a in res.axes)
    rep = audit(mode, res.values(), oracle(name, mode), cfg.lapse, res.points,
                cfg.audit.band_cells, h)
    return cfg, res, rep


# ------------------------------------------------------------------ 1


def test_criterion_01_linear_exactness():
    cfg = load("linear_reach.toml")
    ok = True
    notes = []
    for mode in ("reach", "avoid"):
        cfg.mode = mode
        t0 = time.perf_counter()
        res = build_reachset(cfg)
        elapsed = time.perf_counter() - t0
        system = make_system(cfg.system)
        grid = GridSpec(tuple(cfg.grid.lo), tuple(cfg.grid.hi), tuple(cfg.dp.nodes))
        dp = dp_solve(system, make_target(cfg.target, 2), mode, grid, [cfg.lapse])
        xs, ys = res.axes
        Vh = res.values().reshape(len(xs), len(ys))
        Vd = dp_query(dp, res.points, cfg.lapse).reshape(len(xs), len(ys))
        cell = xs[1] - xs[0]
        dist = level_set_hausdorff(xs, ys, Vh, Vd) / cell
        good = dist <= 2.0 and elapsed <= 60.0 and res.specs[0].table.delta.max() == 0.0
        ok &= good
        notes.append(f"{mode} Hausdorff {dist:.2f} cells, Hopf {elapsed:.1f} s")
    record(1, ok, ", ".join(notes) + " (limits 2 cells, 60 s)")
    assert ok


# ------------------------------------------------------------------ 2, 3, 10


@pytest.mark.parametrize("target", ["B", "S"])
def test_criterion_02_reach_conservative(target):
    cfg, res, rep = audited(SUITE[target], "reach", "constant")
    spec = res.specs[0]
    good = rep.violations == 0 and spec.verdict in ("convex", "concave")
    record(2, good, f"target {target}: {rep.violations} violations, {rep.inside_hopf} Hopf / "
                    f"{rep.inside_dp} DP points, verdict {spec.verdict}")
    assert good


@pytest.mark.parametrize("target", ["B", "S"])
def test_criterion_03_avoid_conservative(target):
    cfg, res, rep = audited(SUITE[target], "avoid", "constant")
    good = rep.violations == 0
    record(3, good, f"target {target}: {rep.violations} violations, {rep.inside_hopf} Hopf / "
                    f"{rep.inside_dp} DP points")
    assert good


def test_criterion_10_negative_control():
    cfg, res, rep = audited(SUITE["S"], "reach", "zero")
    assert np.all(res.specs[0].table.delta == 0.0)
    good = rep.violations > 0
    record(10, good, f"zero delta on target S: {rep.violations} violations (must be > 0)")
    assert good


# ------------------------------------------------------------------ 4


@pytest.mark.parametrize("target", ["B", "S"])
def test_criterion_04_tightening_chain(target):
    name = SUITE[target]
    sets, viol = {}, {}
    for variant in ("constant", "time_varying", "disturbance_only"):
        cfg, res, rep = audited(name, "reach", variant)
        sets[variant] = res.inside
        viol[variant] = rep.violations
    o1 = ordering_violations(sets["constant"], sets["time_varying"])
    o2 = ordering_violations(sets["time_varying"], sets["disturbance_only"])
    good = o1 == 0 and o2 == 0 and not any(viol.values())
    counts = "/".join(str(int(sets[v].sum())) for v in sets)
    record(4, good, f"target {target}: sizes const/tv/do {counts}, ordering violations {o1}+{o2}, "
                    f"audit violations {sum(viol.values())}")
    assert good


# ------------------------------------------------------------------ 5


@pytest.mark.parametrize("kind", ["vdp_ensemble.toml", "vdp_partition.toml"])
def test_criterion_05_ensemble_and_partition(kind):
    base = reachset(SUITE["B"], "reach", "constant")[1].inside.sum()
    cfg, res, rep = audited(SUITE["B"], "reach", "constant", envelope=kind)
    union = int(res.inside.sum())
    gain = union / base - 1.0
    members = len(res.envelope.members)
    good = rep.violations == 0 and gain >= 0.01 and members == (3 if "ensemble" in kind else 4)
    record(5, good, f"{cfg.envelope.kind} ({members} members): {union} vs {base} points "
                    f"(+{100 * gain:.2f}%), {rep.violations} violations")
    assert good


# ------------------------------------------------------------------ 6


@pytest.mark.parametrize("target,variant", [("B", "constant"), ("B", "disturbance_only"),
                                            ("S", "constant")])
def test_criterion_06_closed_loop(target, variant):
    cfg, res = reachset(SUITE[target], "reach", variant)
    system, tgt = res.system, res.target
    spec, _, model = backward_game(system, tgt, "reach", cfg.lapse, variant, None, cfg.step)
    ctrl = ReachController(spec, model, fundamental(model))
    rng = np.random.default_rng(2024)
    cert = res.points[res.inside]
    X0 = cert[rng.choice(len(cert), 100, replace=False)]
    hist, _ = closed_loop_reach(system, ctrl, X0, rng)
    arrived = int(np.sum(tgt.value(hist[-1]) <= 0.0))
    good = arrived == 100
    record(6, good, f"target {target} {variant}: {arrived}/100 rollouts end in the target")
    assert good


# ------------------------------------------------------------------ 7


def test_criterion_07_one_dimensional_oracle():
    # xdot = u, |u| <= 1, J = |x| - r: V(x, t) = max(|x| - t, 0) - r
    t, r = 0.7, 0.5
    s = LinearSystem([[0.0]], [[1.0]], U=Box([0.0], [1.0]))
    times = np.linspace(0.0, t, 15)
    m = from_linear_system(s, times)
    spec = make_game("reach", m, fundamental(m), NormBall([0.0], r), s.U, s.D)
    x = np.linspace(-3.0, 3.0, 50)[:, None]
    err = np.abs(solve_grid(spec, x).values - (np.maximum(np.abs(x[:, 0]) - t, 0.0) - r)).max()
    good = err <= 1e-4
    record(7, good, f"max error {err:.2e} at 50 points (limit 1e-4)")
    assert good


# ------------------------------------------------------------------ 8


def test_criterion_08_pursuit_evasion(tmp_path):
    cfg = load("pursuit.toml")
    cfg.output_dir = str(tmp_path)
    t0 = time.perf_counter()
    res = run_pursuit(cfg, export=True)
    total = time.perf_counter() - t0
    good = res.value.value > 0 and res.captures == 0 and len(res.traces) == 50 and total <= 120
    record(8, good, f"certified value {res.value.value:.3f}, {res.captures}/50 captures, "
                    f"solve {res.solve_time:.2f} s, total {total:.1f} s (limit 120 s)")
    assert good


# ------------------------------------------------------------------ 9


def residual_usage(system, model, delta, X, us, ds):
    """Sampled |f - l| against the Diag(delta) box at the node states.

    Returns the largest ratio |f - l| / delta over components with delta > 0
    and the largest |f - l| where delta is exactly zero; soundness needs the
    first <= 1 and the second == 0.
    """
    ratio, exact = 0.0, 0.0
    for k in range(model.nodes):
        u = us[min(k, len(us) - 1)]
        d = ds[min(k, len(ds) - 1)]
        r = np.abs(system.field(X[k], u, d, model.times[k]) - model.evaluate(k, X[k], u, d))
        pos = delta[k] > 0
        if pos.any():
            ratio = max(ratio, float((r[:, pos] / delta[k][pos]).max()))
        if (~pos).any():
            exact = max(exact, float(r[:, ~pos].max()))
    return ratio, exact


def tube_exits(tube, X):
    return int(sum((~tube.contains(k, X[k], tol=1e-9)).sum() for k in range(tube.nodes)))


def test_criterion_09_monte_carlo_soundness():
    rng = np.random.default_rng(9)
    notes, ok = [], True
    # Van der Pol, target B: full-input and disturbance-only tubes with their deltas
    cfg, res = reachset(SUITE["B"], "reach", "constant")
    system, tgt = res.system, res.target
    for variant, active in (("constant", True), ("time_varying", True),
                            ("disturbance_only", False)):
        spec, stage, model = backward_game(system, tgt, "reach", cfg.lapse, variant, None, cfg.step)
        X, us, ds = sample_backward_trajectories(system, tgt, stage.times, 10_000, rng,
                                                 control_active=active)
        exits = tube_exits(stage.tube_for(variant), X)
        ratio, exact = residual_usage(system, model, spec.table.delta, X, us, ds)
        ok &= exits == 0 and ratio <= 1.0 and exact <= 1e-12
        notes.append(f"VdP {variant}: {exits} exits, max |f-l|/delta {ratio:.3f}")
    # Dubins, pursuit scenario: forward disturbance-only tube of the initial state
    p = load("pursuit.toml").pursuit
    scn = scenario(p.N, p.theta_a, a_max=p.a_max, b_max=p.b_max)
    games = build_avoid_games(scn, scn.initial_state())
    dub = scn.system()
    X, us, ds = sample_forward_trajectories(dub, scn.initial_state(), games.times, 10_000, rng,
                                            control_active=False)
    exits = tube_exits(games.tube, X)
    ratio, exact = residual_usage(dub, games.model, games.error.on_nodes(games.times), X, us, ds)
    ok &= exits == 0 and ratio <= 1.0 and exact <= 1e-12
    notes.append(f"Dubins: {exits} exits, max |f-l|/delta {ratio:.3f}")
    record(9, ok, ", ".join(notes) + " (10^4 trajectories each)")
    assert ok
