"""Command-line experiment driver.

    hopfreach reachset CONFIG    tube -> delta -> Hopf -> envelope -> exports
    hopfreach pursuit CONFIG     certified evasion plus seeded MPC rollouts
    hopfreach dp-gold CONFIG     grid oracle solution cached for audits
    hopfreach audit CONFIG       Hopf set vs cached oracle, exit 3 on violations

Exit codes: 0 pass, 1 config error, 2 numerical failure, 3 audit violation.
The default output root comes from $HOPFREACH_OUTPUT (else ./outputs).
"""

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .audit import audit
from .baseline_dp import DPGrid, GridSpec, dp_solve
from .convex import Box, QuadraticEllipsoid
from .dynamics import LinearSystem, VanDerPol, grid_for
from .envelope import EnvelopeSet, ensemble, partition_target, partitioned_solve
from .errbound import forward_delta
from .errors import ConfigError, StageError
from .export import PALETTE, SVG, contour_segments, write_csv, write_json
from .hopf import SolverConfig, make_game, solve_grid
from .lintv import fundamental, linearize_at
from .pipeline import backward_game, backward_stage

log = logging.getLogger("hopfreach")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_AUDIT = 0, 1, 2, 3


@contextmanager
def stage(name):
    """Re-raise any failure tagged with the pipeline stage it came from."""
    try:
        yield
    except (StageError, ConfigError):
        raise
    except Exception as err:  # noqa: BLE001 - surfaced with the stage name
        raise StageError(name, err) from err


# ---------------------------------------------------------------------------
# building blocks from a config


def make_system(sc: cfgmod.SystemConfig):
    if sc.name == "vanderpol":
        return VanDerPol(mu=sc.mu, u_max=sc.u_max, d_max=sc.d_max)
    if sc.name == "linear":
        A = np.atleast_2d(np.asarray(sc.A, float))
        n = A.shape[0]
        B1 = np.asarray(sc.B1, float).reshape(n, -1)
        B2 = np.zeros((n, 1)) if sc.B2 is None else np.asarray(sc.B2, float).reshape(n, -1)
        U = Box(np.zeros(B1.shape[1]), np.full(B1.shape[1], sc.u_max))
        D = Box(np.zeros(B2.shape[1]), np.full(B2.shape[1], sc.d_max))
        return LinearSystem(A, B1, B2, sc.c, U=U, D=D)
    raise ConfigError(f"system {sc.name!r} has no reach-set pipeline; use the pursuit command")


def make_target(tc: cfgmod.TargetConfig, n):
    center = np.asarray(tc.center, float)
    if center.size != n:
        raise ConfigError(f"target.center has {center.size} entries, the system has {n} states")
    if tc.shape is not None:
        return QuadraticEllipsoid(center, np.asarray(tc.shape, float))
    return QuadraticEllipsoid.ball(center, tc.radius)


def grid_points(gc: cfgmod.GridConfig):
    axes = [np.linspace(a, b, int(m)) for a, b, m in zip(gc.lo, gc.hi, gc.nodes)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack(mesh, axis=-1).reshape(-1, len(axes))


def solver_config(cfg):
    s = cfg.solver
    return SolverConfig(restarts=s.restarts, tol=s.tol, max_iter=s.max_iter,
                        seed=s.seed + cfg.seed, method=s.method)


@dataclass
class ReachsetResult:
    config: object
    system: object
    target: object
    axes: list
    points: np.ndarray
    envelope: EnvelopeSet
    specs: list
    stage: object = None
    timings: dict = field(default_factory=dict)
    mask: np.ndarray = None   # grid points the values are valid for

    @property
    def inside(self):
        out = np.zeros(len(self.points), bool)
        out[self.mask] = self.envelope.combined()
        return out

    def values(self):
        out = np.full(len(self.points), np.nan)
        out[self.mask] = self.envelope.combined_value()
        return out


def _single_forward(cfg, system, target, points, solver):
    lo, hi = np.asarray(cfg.error.region_lo, float), np.asarray(cfg.error.region_hi, float)
    mask = np.all((points >= lo - 1e-12) & (points <= hi + 1e-12), axis=1)
    if not mask.any():
        raise ConfigError("no grid point lies inside the forward region")
    times = grid_for(cfg.lapse, cfg.step)
    ref = target.center if cfg.error.reference is None else np.asarray(cfg.error.reference, float)
    with stage("model"):
        model = linearize_at(system, ref, times, label="forward")
        fund = fundamental(model)
    with stage("error"):
        eb, _ = forward_delta(system, model, Box.from_bounds(lo, hi))
    spec = make_game(cfg.mode, model, fund, target, system.U, system.D, eb, solver=solver,
                     system=system, label="forward")
    return spec, mask


def build_reachset(cfg):
    t0 = time.perf_counter()
    with stage("system"):
        system = make_system(cfg.system)
        target = make_target(cfg.target, system.state_dim)
    if len(cfg.grid.lo) != system.state_dim:
        raise ConfigError("grid dimension differs from the system dimension")
    axes, points = grid_points(cfg.grid)
    solver = solver_config(cfg)
    timings = {}
    mask = np.ones(len(points), bool)
    env_kind = cfg.envelope.kind
    variant = cfg.error.variant
    st = None
    if variant == "forward":
        if env_kind != "single":
            raise ConfigError("the forward variant supports single envelopes only")
        spec, mask = _single_forward(cfg, system, target, points, solver)
        with stage("hopf"):
            env = ensemble([spec], points[mask], cfg.workers)
        specs = [spec]
    else:
        with stage("tube"):
            st = backward_stage(system, target, cfg.lapse, cfg.step)
        timings["tube"] = time.perf_counter() - t0
        ref = cfg.error.reference
        if env_kind == "single":
            with stage("error"):
                spec = backward_game(system, target, cfg.mode, cfg.lapse, variant, ref, cfg.step,
                                     solver=solver, stage=st, label="single")[0]
            specs = [spec]
            with stage("hopf"):
                env = ensemble(specs, points, cfg.workers)
        elif env_kind == "ensemble":
            with stage("error"):
                specs = [backward_game(system, target, cfg.mode, cfg.lapse, variant, r, cfg.step,
                                       solver=solver, stage=st, label=f"model{i}")[0]
                         for i, r in enumerate(cfg.envelope.references)]
            with stage("envelope"):
                env = ensemble(specs, points, cfg.workers)
        else:
            with stage("envelope"):
                pieces, meta = partition_target(target, cfg.mode, cfg.envelope.parts,
                                                shrink=cfg.envelope.shrink)
            specs = []

            def build(piece, i):
                within = st if cfg.mode == "reach" else None
                pst = backward_stage(system, piece, cfg.lapse, cfg.step, within=within)
                s = backward_game(system, piece, cfg.mode, cfg.lapse, variant, None, cfg.step,
                                  solver=solver, stage=pst, label=f"piece{i}")[0]
                specs.append(s)
                return s

            with stage("envelope"):
                env = partitioned_solve(pieces, build, points, cfg.mode, cfg.workers, meta)
    timings["total"] = time.perf_counter() - t0
    return ReachsetResult(cfg, system, target, axes, points, env, specs, st, timings, mask)


# ---------------------------------------------------------------------------
# exports


def _summary_rows(res: ReachsetResult):
    cell = float(np.prod([(a[-1] - a[0]) / (len(a) - 1) for a in res.axes]))
    rows = []
    for prov, m in zip(res.envelope.provenance, res.envelope.members):
        k = int(m.member().sum())
        rows.append([prov.get("name"), k, k * cell])
    k = int(res.envelope.combined().sum())
    rows.append(["combined", k, k * cell])
    return rows


def export_reachset(res: ReachsetResult, out: Path, audit_rep=None):
    out.mkdir(parents=True, exist_ok=True)
    with stage("export"):
        res.envelope.to_csv(out / "values.csv")
        for s in res.specs:
            if s.error is not None:
                s.error.to_csv(out / f"delta_{s.label or 'model'}.csv")
        if res.stage is not None:
            res.stage.full.to_csv(out / "tube_full.csv")
            res.stage.dist_only.to_csv(out / "tube_disturbance_only.csv")
        rows = _summary_rows(res)
        write_csv(out / "summary.csv", ["set", "points_inside", "area"], rows)
        info = {"mode": res.config.mode, "lapse": res.config.lapse,
                "variant": res.config.error.variant, "envelope": res.envelope.kind,
                "flags": res.envelope.flags,
                "delta_max": [s.error.delta.max(axis=0).tolist() for s in res.specs
                              if s.error is not None],
                "verdicts": [s.verdict for s in res.specs],
                "sets": {r[0]: {"points_inside": r[1], "area": r[2]} for r in rows}}
        if getattr(res.envelope, "meta", None):
            info["partition"] = res.envelope.meta
        if audit_rep is not None:
            info["audit"] = {"violations": audit_rep.violations, "inside_dp": audit_rep.inside_dp,
                             "band_cells": audit_rep.band_cells}
        write_json(out / "summary.json", info)
        if len(res.axes) == 2:
            _reachset_svg(res, out / "reachset.svg")
    return rows


def _reachset_svg(res, path):
    xs, ys = res.axes
    svg = SVG((xs[0], ys[0]), (xs[-1], ys[-1]))
    shape = (len(xs), len(ys))
    tv = np.full(len(res.points), np.nan)
    tv[:] = res.target.value(res.points)
    svg.segments(contour_segments(xs, ys, tv.reshape(shape)), "black", 1.5)
    for i, m in enumerate(res.envelope.members):
        v = np.full(len(res.points), np.inf)
        v[res.mask] = m.values
        svg.segments(contour_segments(xs, ys, v.reshape(shape)), PALETTE[(i + 1) % len(PALETTE)], 0.7)
    v = res.values()
    v = np.where(np.isnan(v), np.inf, v)
    svg.segments(contour_segments(xs, ys, v.reshape(shape)), PALETTE[0], 2.0)
    svg.save(path)


def _print_table(rows, head=("set", "points", "area")):
    print(f"{head[0]:<12} {head[1]:>8} {head[2]:>10}")
    for name, k, area in rows:
        print(f"{str(name):<12} {k:>8d} {area:>10.5f}")


# ---------------------------------------------------------------------------
# commands


def _gold_stem(cfg):
    return Path(cfg.dp.gold) if cfg.dp.gold else cfg.output_path() / "dp_gold"


def run_dp_gold(cfg):
    with stage("system"):
        system = make_system(cfg.system)
        target = make_target(cfg.target, system.state_dim)
    if system.state_dim != 2:
        raise ConfigError("the grid oracle supports two-dimensional systems only")
    spec = GridSpec(tuple(cfg.grid.lo), tuple(cfg.grid.hi), tuple(cfg.dp.nodes))
    with stage("dp"):
        dp = dp_solve(system, target, cfg.mode, spec, [cfg.lapse], cfl=cfg.dp.cfl,
                      dissipation=cfg.dp.dissipation)
    stem = _gold_stem(cfg)
    dp.save(stem)
    cfgmod.write_snapshot(cfg, cfg.output_path())
    print(f"DP gold set written to {stem}.npz ({dp.steps} steps)")
    return dp


def load_gold(cfg):
    stem = _gold_stem(cfg)
    if not stem.with_suffix(".npz").exists():
        raise ConfigError(f"no cached DP gold set at {stem}.npz; run `hopfreach dp-gold` "
                          "with this config first")
    dp = DPGrid.load(stem)
    if dp.mode != cfg.mode:
        raise ConfigError(f"cached DP gold set is for mode {dp.mode!r}, config asks for {cfg.mode!r}")
    return dp


def _audit(cfg, res, dp):
    spacing = max((a[-1] - a[0]) / (len(a) - 1) for a in res.axes)
    mask = res.mask
    with stage("audit"):
        rep = audit(cfg.mode, res.values()[mask], dp, cfg.lapse, res.points[mask],
                    cfg.audit.band_cells, spacing)
    return rep


def run_reachset(cfg):
    out = cfg.output_path()
    cfgmod.write_snapshot(cfg, out)
    res = build_reachset(cfg)
    rep = None
    stem = _gold_stem(cfg)
    if len(res.axes) == 2 and stem.with_suffix(".npz").exists():
        try:
            rep = _audit(cfg, res, load_gold(cfg))
        except ConfigError as err:
            log.warning("skipping audit: %s", err)
    rows = export_reachset(res, out, rep)
    _print_table(rows)
    if rep is not None:
        print(f"audit vs DP gold: {rep.violations} violation(s)")
    if res.envelope.flags:
        print("flags: " + ", ".join(res.envelope.flags))
    print(f"outputs in {out}")
    return res, rep


def run_audit(cfg):
    dp = load_gold(cfg)
    out = cfg.output_path()
    cfgmod.write_snapshot(cfg, out)
    res = build_reachset(cfg)
    rep = _audit(cfg, res, dp)
    pts = res.points[res.mask]
    n = pts.shape[1]
    write_csv(out / "audit.csv", [f"x{i}" for i in range(n)] + ["hopf", "dp", "band", "violation"],
              rep.rows(pts, res.values()[res.mask]))
    write_json(out / "audit.json", {"mode": rep.mode, "lapse": rep.lapse, "points": rep.points,
                                     "inside_hopf": rep.inside_hopf, "inside_dp": rep.inside_dp,
                                     "violations": rep.violations, "band_cells": rep.band_cells,
                                     "variant": cfg.error.variant, "passed": rep.passed})
    print(f"{cfg.mode} audit, lapse {cfg.lapse:g}: hopf {rep.inside_hopf} / dp {rep.inside_dp} "
          f"points, {rep.violations} violation(s)")
    return rep


@dataclass
class PursuitResult:
    scenario: object
    value: object
    traces: list
    solve_time: float
    total_time: float

    @property
    def certified(self):
        return self.value.value > 0

    @property
    def captures(self):
        return sum(t.captured for t in self.traces)


def run_pursuit(cfg, export=True):
    from .game import (HopfEvader, MPCPursuers, build_avoid_games, decomposed_avoid_value,
                       scenario, simulate)

    p = cfg.pursuit
    t0 = time.perf_counter()
    with stage("game"):
        scn = scenario(p.N, p.theta_a, r_p=p.r_p, v_a=p.v_a, v_b=p.v_b,
                       capture_radius=p.capture_radius, theta_max=p.theta_max, r_max=p.r_max,
                       horizon=p.horizon, step=p.step, a_max=p.a_max, b_max=p.b_max)
        system = scn.system()
        games = build_avoid_games(scn, scn.initial_state(), solver=solver_config(cfg), system=system)
    with stage("hopf"):
        dv = decomposed_avoid_value(games, workers=cfg.workers)
    t_solve = time.perf_counter() - t0

    def rollout(i):
        ev = HopfEvader(games, dv, p.switch_margin)
        mpc = MPCPursuers(scn, games.error, p.mpc_horizon, p.mpc_iters, seed=cfg.seed + i,
                          system=system)
        return simulate(scn, ev, mpc, seed=cfg.seed + i, system=system)

    with stage("simulate"):
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as ex:
                traces = list(ex.map(rollout, range(p.rollouts)))
        else:
            traces = [rollout(i) for i in range(p.rollouts)]
    res = PursuitResult(scn, dv, traces, t_solve, time.perf_counter() - t0)
    if export:
        export_pursuit(cfg, res)
    print(f"certified value {dv.value:.4f} (pursuer {dv.index}, lapse {dv.lapse:g}); "
          f"{res.captures}/{len(traces)} rollouts captured; solve {t_solve:.1f} s, "
          f"total {res.total_time:.1f} s")
    return res


def export_pursuit(cfg, res: PursuitResult):
    out = cfg.output_path()
    cfgmod.write_snapshot(cfg, out)
    with stage("export"):
        rows = [[cfg.seed + i, int(t.captured), t.min_distance,
                 "" if t.capture_time is None else t.capture_time] for i, t in enumerate(res.traces)]
        write_csv(out / "rollouts.csv", ["seed", "captured", "min_distance", "capture_time"], rows)
        members = [[k[0], k[1], r.value, int(r.converged)] for k, r in sorted(res.value.members.items())]
        write_csv(out / "members.csv", ["pursuer", "lapse", "value", "converged"], members)
        write_json(out / "summary.json", {"certified_value": res.value.value,
                                          "active_pursuer": res.value.index,
                                          "active_lapse": res.value.lapse,
                                          "certified": res.certified, "captures": res.captures,
                                          "rollouts": len(res.traces), "flags": res.value.flags})
        if res.traces:
            res.traces[0].to_csv(out / "trace_seed0.csv")
            _trace_svg(res.scenario, res.traces[0], out / "trace_seed0.svg")


def _trace_svg(scn, trace, path):
    xy = trace.states.reshape(len(trace.times), scn.N, 3)[..., :2]
    r = float(np.abs(xy).max()) * 1.05
    svg = SVG((-r, -r), (r, r))
    svg.circle((0.0, 0.0), scn.capture_radius, "black", 1.5)
    for i in range(scn.N):
        svg.polyline(xy[:, i], PALETTE[(i + 1) % len(PALETTE)], 1.2)
    svg.save(path)


# ---------------------------------------------------------------------------


def _parser():
    ap = argparse.ArgumentParser(prog="hopfreach", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("reachset", "pursuit", "dp-gold", "audit"):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="experiment TOML file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=None, help="parallelism degree")
        sp.add_argument("--output", default=None, help="output root (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.config, seed=args.seed, workers=args.workers)
        if args.output:
            cfg.output_dir = args.output
        if args.command == "reachset":
            if cfg.kind != "reachset":
                raise ConfigError("config kind is not 'reachset'")
            run_reachset(cfg)
        elif args.command == "pursuit":
            if cfg.kind != "pursuit":
                raise ConfigError("config kind is not 'pursuit'")
            res = run_pursuit(cfg)
            if res.certified and res.captures:
                print("certified evasion was violated by a rollout", file=sys.stderr)
                return EXIT_AUDIT
        elif args.command == "dp-gold":
            run_dp_gold(cfg)
        elif args.command == "audit":
            if not run_audit(cfg).passed:
                return EXIT_AUDIT
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as err:
        if isinstance(err.cause, ConfigError) or err.stage == "system":
            print(f"config error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
