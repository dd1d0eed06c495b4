"""Combining solved envelopes: model ensembles and target partitions.

Reach sets from several valid envelopes may be united, since each one is
already an under-approximation. For Avoid, an ensemble must be intersected,
while a covering partition of the target is united.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .convex import QuadraticEllipsoid
from .errors import ConfigError
from .hopf import ValueGrid, solve_grid

MIN_PIECE_RADIUS = 1e-3
AVOID_OVERLAP = 0.2


@dataclass
class EnvelopeSet:
    mode: str
    kind: str  # ensemble | partition
    members: list
    provenance: list
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("an envelope set needs at least one member")
        pts = self.members[0].points
        for m in self.members[1:]:
            if m.points.shape != pts.shape or not np.array_equal(m.points, pts):
                raise ValueError("envelope members must share query points")

    @property
    def points(self):
        return self.members[0].points

    def member_masks(self, level=0.0):
        return np.array([m.member(level) for m in self.members])

    def combined(self, level=0.0):
        masks = self.member_masks(level)
        if self.kind == "ensemble" and self.mode == "avoid":
            return masks.all(axis=0)
        return masks.any(axis=0)

    def combined_value(self):
        """Value whose zero sublevel set is the combined set."""
        vals = np.array([m.values for m in self.members])
        if self.kind == "ensemble" and self.mode == "avoid":
            return vals.max(axis=0)
        return vals.min(axis=0)

    def to_csv(self, path):
        n = self.points.shape[1]
        names = [str(p.get("name", i)) for i, p in enumerate(self.provenance)]
        vals = np.array([m.values for m in self.members])
        comb = self.combined()
        with open(path, "w") as fh:
            fh.write(",".join([f"x{i}" for i in range(n)] + [f"value_{s}" for s in names]
                              + ["combined"]) + "\n")
            for j, x in enumerate(self.points):
                fh.write(",".join([f"{t:.10g}" for t in x] + [f"{v:.12g}" for v in vals[:, j]]
                                  + [str(int(comb[j]))]) + "\n")


def _same_target(a, b):
    return (type(a) is type(b) and np.allclose(a.center, b.center)
            and np.allclose(getattr(a, "shape", 0), getattr(b, "shape", 0)))


def _solve_all(specs, points, workers):
    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda s: solve_grid(s, points), specs))
    return [solve_grid(s, points) for s in specs]


def ensemble(specs, points, workers=1):
    """Combine envelopes of several linear models of the same game."""
    if not specs:
        raise ConfigError("empty ensemble")
    mode = specs[0].mode
    for s in specs[1:]:
        if s.mode != mode:
            raise ConfigError("ensemble members mix Reach and Avoid")
        if not _same_target(s.target, specs[0].target):
            raise ConfigError("ensemble members have different targets")
        if abs(s.lapse - specs[0].lapse) > 1e-9:
            raise ConfigError("ensemble members have different horizons")
    grids = _solve_all(specs, points, workers)
    prov = [{"name": s.label or f"model{i}", "index": i, "kind": "model"} for i, s in enumerate(specs)]
    flags = sorted({f for s in specs for f in s.flags()})
    return EnvelopeSet(mode, "ensemble", grids, prov, flags)


def _unit_cover_2d(parts, overlap):
    """Disks covering the unit disk, one per angular sector."""
    out = []
    for k in range(parts):
        a0, a1 = 2 * np.pi * k / parts, 2 * np.pi * (k + 1) / parts
        arc = np.linspace(a0, a1, 64)
        pts = np.vstack([[0.0, 0.0], np.c_[np.cos(arc), np.sin(arc)]])
        c, r = _enclosing_circle(pts)
        out.append((c, r * (1.0 + overlap)))
    return out


def _enclosing_circle(pts):
    """Smallest enclosing circle of a small planar point set."""
    best = None
    n = len(pts)

    def ok(c, r):
        return np.all(np.linalg.norm(pts - c, axis=1) <= r + 1e-12)

    for i in range(n):
        for j in range(i + 1, n):
            c = 0.5 * (pts[i] + pts[j])
            r = 0.5 * np.linalg.norm(pts[i] - pts[j])
            if (best is None or r < best[1]) and ok(c, r):
                best = (c, r)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b, c3 = pts[i], pts[j], pts[k]
                d = 2 * (a[0] * (b[1] - c3[1]) + b[0] * (c3[1] - a[1]) + c3[0] * (a[1] - b[1]))
                if abs(d) < 1e-14:
                    continue
                ux = ((a @ a) * (b[1] - c3[1]) + (b @ b) * (c3[1] - a[1]) + (c3 @ c3) * (a[1] - b[1])) / d
                uy = ((a @ a) * (c3[0] - b[0]) + (b @ b) * (a[0] - c3[0]) + (c3 @ c3) * (b[0] - a[0])) / d
                c = np.array([ux, uy])
                r = np.linalg.norm(a - c)
                if (best is None or r < best[1]) and ok(c, r):
                    best = (c, r)
    return best


def _inner_offsets(n, parts):
    """Unit directions for the inner pieces."""
    if n == 2:
        ang = 2 * np.pi * np.arange(parts) / parts
        return np.c_[np.cos(ang), np.sin(ang)]
    if parts > 2 * n:
        raise ConfigError(f"at most {2 * n} inner pieces in {n} dimensions")
    dirs = np.vstack([np.eye(n), -np.eye(n)])
    return dirs[:parts]


def partition_target(target, mode, parts, shrink=0.6, overlap=AVOID_OVERLAP,
                     min_radius=MIN_PIECE_RADIUS):
    """Split an ellipsoidal target into pieces.

    Reach pieces are scaled copies of the target pushed toward its boundary,
    so their union stays inside it. Avoid pieces cover the target, each one
    enclosing an angular sector with a relative overlap margin.
    Returns (pieces, metadata).
    """
    if not isinstance(target, QuadraticEllipsoid):
        raise ConfigError("only ellipsoidal targets can be partitioned")
    if parts < 1:
        raise ConfigError("parts must be >= 1")
    n = target.dim
    L = np.linalg.cholesky(target.shape)
    semi_min = float(np.sqrt(np.linalg.eigvalsh(target.shape).min()))
    meta = {"mode": mode, "parts": parts}
    if parts == 1:
        return [target], dict(meta, scale=[1.0], overlap=0.0)
    if mode == "reach":
        rho = shrink
        offs = (1.0 - rho) * _inner_offsets(n, parts)
        scales = [rho] * parts
        meta.update(scale=scales, overlap=None, inner=True)
    elif mode == "avoid":
        if n != 2:
            raise ConfigError("covering partitions are implemented for planar targets only")
        cover = _unit_cover_2d(parts, overlap)
        offs = np.array([c for c, _ in cover])
        scales = [r for _, r in cover]
        meta.update(scale=scales, overlap=overlap, inner=False, assumption_unverified=True)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if min(scales) * semi_min < min_radius:
        raise ConfigError("partition pieces fall below the resolution floor")
    pieces = [QuadraticEllipsoid(target.center + L @ o, s * s * target.shape)
              for o, s in zip(offs, scales)]
    return pieces, meta


def partitioned_solve(pieces, build_spec, points, mode, workers=1, meta=None):
    """Solve one game per piece and unite the results.

    ``build_spec(piece, index)`` must return a GameSpec whose error bound was
    built from that piece's own tube.
    """
    specs = [build_spec(p, i) for i, p in enumerate(pieces)]
    for s in specs:
        if s.mode != mode:
            raise ConfigError("piece game has the wrong mode")
    grids = _solve_all(specs, points, workers)
    prov = [{"name": f"piece{i}", "index": i, "kind": "piece"} for i in range(len(pieces))]
    flags = sorted({f for s in specs for f in s.flags()})
    if mode == "avoid" and len(pieces) > 1:
        flags.append("assumption_unverified")
    env = EnvelopeSet(mode, "partition", grids, prov, flags)
    env.meta = meta or {}
    return env


def single(spec, points):
    """An envelope set holding one solved game."""
    g = solve_grid(spec, points)
    return EnvelopeSet(spec.mode, "ensemble", [g], [{"name": spec.label or "model0", "index": 0,
                                                    "kind": "model"}], spec.flags())


__all__ = ["EnvelopeSet", "ensemble", "partition_target", "partitioned_solve", "single",
           "ValueGrid"]
