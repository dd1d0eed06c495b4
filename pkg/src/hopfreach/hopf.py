"""Hopf-formula solver for linear games with antagonistic error.

The z-space objective is

    O(p) = J*(p) - z.p + sum_k w_k H_k(p),     value = -min_p O(p).

Reach integrand:  s_U(R1 p) - s_D(-R2 p) - s_E(-E p) - p.drift
Avoid integrand:  s_D(R2 p) - s_U(-R1 p) + s_E(E p) - p.drift

(s_C is the support function of C.) Every support function of a box or a
one-dimensional set is a sum of |g.p| terms, so the time integral compiles
into  O(p) = J*(p) + (lin - z).p + sum_l a_l |g_l.p| + sum_m c_m ||S_m p||.
In one or two dimensions with no norm terms this is minimised exactly by
enumerating the cones on which it is smooth; otherwise a multi-start
proximal subgradient method is used.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .convex import NormBall, QuadraticEllipsoid, support_terms
from .lintv import HamiltonianTable

BARRIER = np.inf


@dataclass
class SolverConfig:
    restarts: int = 20
    tol: float = 1e-6
    max_iter: int = 2000
    seed: int = 0
    method: str = "auto"  # auto | planar | subgradient
    start_scale: float = 1.0


@dataclass
class GameSpec:
    mode: str
    table: HamiltonianTable
    target: object
    solver: SolverConfig = field(default_factory=SolverConfig)
    error: object = None
    system: object = None
    label: str = ""

    def __post_init__(self):
        if self.mode not in ("reach", "avoid"):
            raise ValueError(f"mode must be 'reach' or 'avoid', got {self.mode!r}")
        if self.target.dim != self.table.state_dim:
            raise ValueError("target and model dimensions differ")
        self._compiled = None
        self.verdict = reach_convexity_check(self) if self.mode == "reach" else "avoid"

    @property
    def lapse(self):
        return self.table.horizon

    @property
    def compiled(self):
        if self._compiled is None:
            self._compiled = compile_objective(self.table, self.mode, self.target)
        return self._compiled

    def to_z(self, x):
        return self.table.to_z(x)

    def flags(self):
        out = []
        if self.mode == "reach" and self.verdict == "unknown":
            out.append("unverified_viscosity")
        return out


@dataclass
class CompiledObjective:
    target: object
    lin: np.ndarray
    G: np.ndarray
    a: np.ndarray
    norms: list

    @property
    def dim(self):
        return self.lin.size

    def value(self, z, p):
        """Objective at costates p (..., n) for states z broadcastable to p."""
        p = np.asarray(p, dtype=float)
        v = self.target.conjugate(p) + np.einsum("...i,...i->...", self.lin - z, p)
        if self.a.size:
            v = v + np.einsum("...m,m->...", np.abs(np.einsum("...i,mi->...m", p, self.G)), self.a)
        for c, S in self.norms:
            v = v + c * np.linalg.norm(np.einsum("...i,mi->...m", p, S), axis=-1)
        return v

    def smooth_free_grad(self, z, p):
        """Subgradient of everything except J*."""
        p = np.asarray(p, dtype=float)
        g = np.broadcast_to(self.lin - z, p.shape).copy()
        if self.a.size:
            s = np.sign(np.einsum("...i,mi->...m", p, self.G)) * self.a
            g = g + np.einsum("...m,mi->...i", s, self.G)
        for c, S in self.norms:
            Sp = np.einsum("...i,mi->...m", p, S)
            nrm = np.linalg.norm(Sp, axis=-1, keepdims=True)
            unit = np.where(nrm > 0, Sp / np.where(nrm > 0, nrm, 1.0), 0.0)
            g = g + c * np.einsum("...m,mi->...i", unit, S)
        return g

    def subgradient(self, z, p):
        g = self.smooth_free_grad(z, p)
        if isinstance(self.target, QuadraticEllipsoid):
            g = g + self.target.conjugate_grad(p)
        else:
            g = g + self.target.center
        return g


def _merge_rows(G, a, tol=1e-12):
    """Combine parallel rows: a|g.p| + b|(-g).p| = (a + b)|g.p|."""
    if G.shape[0] == 0:
        return G, a
    nrm = np.linalg.norm(G, axis=1)
    keep = nrm > tol
    G, a, nrm = G[keep], a[keep], nrm[keep]
    U = G / nrm[:, None]
    # canonical sign: first clearly nonzero component positive
    lead = np.argmax(np.abs(U) > 1e-9, axis=1)
    sgn = np.sign(U[np.arange(U.shape[0]), lead])
    U = U * sgn[:, None]
    key = np.round(U / 1e-10).astype(np.int64)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = np.ravel(inv)
    m = inv.max() + 1
    coef = np.zeros(m)
    np.add.at(coef, inv, a * nrm)
    dirs = np.zeros((m, U.shape[1]))
    dirs[inv] = U
    live = np.abs(coef) > 0
    return dirs[live], coef[live]


def compile_objective(table: HamiltonianTable, mode, target):
    n = table.state_dim
    lin = np.zeros(n)
    rows, coefs, norms = [], [], []
    for k, terms in enumerate(table.node_terms(mode)):
        w = table.weights[k]
        if w == 0:
            continue
        lin -= w * table.drift[k]
        for sgn, cset, M in terms:
            l, Gs, a, nt = support_terms(cset, M)
            lin += sgn * w * l
            if a.size:
                rows.append(Gs)
                coefs.append(sgn * w * a)
            for c, S in nt:
                norms.append((sgn * w * c, S))
    G = np.vstack(rows) if rows else np.zeros((0, n))
    a = np.concatenate(coefs) if coefs else np.zeros(0)
    G, a = _merge_rows(G, a)
    return CompiledObjective(target, lin, G, a, norms)


def hopf_objective(spec: GameSpec, z, p):
    """(objective, subgradient) at costate p; +inf outside the conjugate domain."""
    comp = spec.compiled
    return comp.value(z, p), comp.subgradient(z, p)


def hopf_objective_direct(spec: GameSpec, z, p):
    """Objective assembled node by node from support functions (no compilation)."""
    p = np.asarray(p, dtype=float)
    return spec.target.conjugate(p) - np.einsum("...i,...i->...", z, p) + spec.table.integral(p, spec.mode)


@dataclass
class HopfResult:
    value: float
    p_star: np.ndarray
    objective_evals: int
    restarts_used: int
    converged: bool
    gap_estimate: float
    flags: list = field(default_factory=list)


# --------------------------------------------------------------------------
# exact cone enumeration for n <= 2


def _ray_set(comp):
    n = comp.dim
    if n == 1:
        return np.array([[1.0], [-1.0]])
    ang = [0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi]
    for g in comp.G:
        base = np.arctan2(g[1], g[0]) + 0.5 * np.pi
        ang += [base % (2 * np.pi), (base + np.pi) % (2 * np.pi)]
    ang = np.unique(np.round(np.array(ang), 14))
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _planar_min(comp, Z):
    """Global minimum of the compiled objective for each row of Z (n <= 2)."""
    n = comp.dim
    rays = _ray_set(comp)
    tgt = comp.target
    P = Z.shape[0]
    # sector bisectors carry the constant sign pattern of each cone
    if n == 1:
        mids = rays.copy()
        lo_r, hi_r = rays, rays
    else:
        nxt = np.roll(rays, -1, axis=0)
        mids = rays + nxt
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        lo_r, hi_r = rays, nxt
    beta = np.einsum("sm,m,mi->si", np.sign(mids @ comp.G.T), comp.a, comp.G) if comp.a.size else np.zeros_like(mids)
    ray_abs = np.abs(rays @ comp.G.T) @ comp.a if comp.a.size else np.zeros(len(rays))

    cands = [np.zeros((P, 1, n))]
    if isinstance(tgt, QuadraticEllipsoid):
        Q, Qi, c = tgt.shape, tgt.shape_inv, tgt.center
        # interior stationary point of each cone
        rhs = Z[:, None, :] - c - comp.lin - beta[None, :, :]
        ps = np.einsum("ij,psj->psi", Qi, rhs)
        inside = _in_cone(ps, lo_r, hi_r, n)
        ps = np.where(inside[..., None], ps, 0.0)
        cands.append(ps)
        # minimiser along each boundary ray
        eQe = np.einsum("ri,ij,rj->r", rays, Q, rays)
        coef = np.einsum("ri,pi->pr", rays, c + comp.lin - Z) + ray_abs[None, :]
        t = np.maximum(0.0, -coef / eQe[None, :])
        cands.append(t[..., None] * rays[None, :, :])
    elif isinstance(tgt, NormBall):
        v = comp.lin + tgt.center - Z
        vs = v[:, None, :] + beta[None, :, :]
        nrm = np.linalg.norm(vs, axis=-1, keepdims=True)
        ps = -vs / np.where(nrm > 0, nrm, 1.0)
        inside = _in_cone(ps, lo_r, hi_r, n) & (nrm[..., 0] > 0)
        cands.append(np.where(inside[..., None], ps, 0.0))
        cands.append(np.broadcast_to(rays[None, :, :], (P,) + rays.shape))
    else:
        raise TypeError("unsupported target type")
    allp = np.concatenate(cands, axis=1)
    vals = comp.value(Z[:, None, :], allp)
    j = np.argmin(vals, axis=1)
    best = allp[np.arange(P), j]
    return vals[np.arange(P), j], best, allp.shape[1]


def _in_cone(ps, lo_r, hi_r, n, tol=1e-12):
    if n == 1:
        return (ps[..., 0] * lo_r[None, :, 0]) > 0
    c1 = lo_r[None, :, 0] * ps[..., 1] - lo_r[None, :, 1] * ps[..., 0]
    c2 = ps[..., 0] * hi_r[None, :, 1] - ps[..., 1] * hi_r[None, :, 0]
    return (c1 >= -tol) & (c2 >= -tol)


# --------------------------------------------------------------------------
# multi-start proximal subgradient


def point_seed(master, x):
    """Seed derived from the query coordinates, so results do not depend on order."""
    digest = hashlib.sha256(np.ascontiguousarray(np.asarray(x, dtype=np.float64)).tobytes()).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    return np.random.SeedSequence([int(master)] + [int(w) for w in words])


def _starts(comp, Z, X, cfg):
    P, n = Z.shape
    R = max(1, cfg.restarts)
    tgt = comp.target
    p0 = tgt.lapse_zero_costate(Z)
    starts = np.empty((P, R, n))
    starts[:, 0] = p0
    if R > 1:
        for i in range(P):
            rng = np.random.default_rng(point_seed(cfg.seed, X[i]))
            scale = cfg.start_scale * (1.0 + np.linalg.norm(p0[i]))
            starts[i, 1:] = p0[i] + scale * rng.standard_normal((R - 1, n))
    if isinstance(tgt, NormBall):
        nrm = np.linalg.norm(starts, axis=-1, keepdims=True)
        starts = np.where(nrm > 1.0, starts / nrm, starts)
    return starts


def _prox_subgradient(comp, Z, starts, cfg):
    P, R, n = starts.shape
    tgt = comp.target
    Zb = np.broadcast_to(Z[:, None, :], starts.shape)
    p = starts.copy()
    f = comp.value(Zb, p)
    eta = np.broadcast_to((1.0 / (1.0 + np.linalg.norm(Z, axis=-1)))[:, None], (P, R)).copy()
    active = np.ones((P, R), dtype=bool)
    done = np.zeros((P, R), dtype=bool)
    evals = np.ones((P, R), dtype=np.int64)
    for _ in range(cfg.max_iter):
        if not active.any():
            break
        g = comp.smooth_free_grad(Zb, p)
        q = tgt.prox_conjugate((p - eta[..., None] * g).reshape(-1, n), eta.reshape(-1)).reshape(p.shape)
        fq = comp.value(Zb, q)
        evals += active
        step = np.linalg.norm(q - p, axis=-1)
        better = (fq < f) & active
        p = np.where(better[..., None], q, p)
        f = np.where(better, fq, f)
        small = active & (step <= cfg.tol)
        done |= small
        eta = np.where(active & ~better, 0.5 * eta, eta)
        active &= ~small
    return p, f, done, evals


def _solve_batch(spec, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if spec.error is not None:
        for x in X:
            spec.error.check_scope(x)
    comp = spec.compiled
    Z = spec.to_z(X)
    cfg = spec.solver
    method = cfg.method
    if method == "auto":
        method = "planar" if comp.dim <= 2 and not comp.norms else "subgradient"
    base_flags = spec.flags()
    results = []
    if method == "planar":
        vals, best, ncand = _planar_min(comp, Z)
        for i in range(X.shape[0]):
            results.append(HopfResult(float(-vals[i]), best[i], ncand, 0, bool(np.isfinite(vals[i])),
                                      0.0, list(base_flags)))
        return results
    starts = _starts(comp, Z, X, cfg)
    p, f, done, evals = _prox_subgradient(comp, Z, starts, cfg)
    for i in range(X.shape[0]):
        order = np.argsort(f[i], kind="stable")
        j = order[0]
        top = f[i][order[: min(3, len(order))]]
        gap = float(top.max() - top.min()) if np.all(np.isfinite(top)) else np.inf
        conv = bool(done[i].any())
        flags = list(base_flags)
        if not conv:
            flags.append("not_converged")
        results.append(HopfResult(float(-f[i, j]), p[i, j].copy(), int(evals[i].sum()),
                                  starts.shape[1], conv, gap, flags))
    return results


def solve_point(spec: GameSpec, x, warm_start=None):
    """Minimise the Hopf objective at one state. ``warm_start`` adds a start costate."""
    if warm_start is None:
        return _solve_batch(spec, x)[0]
    comp = spec.compiled
    z = spec.to_z(np.atleast_2d(x))
    base = _solve_batch(spec, x)[0]
    pw, fw, dw, ew = _prox_subgradient(comp, z, np.asarray(warm_start, float)[None, None, :], spec.solver)
    if fw[0, 0] < -base.value:
        base.value = float(-fw[0, 0])
        base.p_star = pw[0, 0].copy()
        base.objective_evals += int(ew.sum())
    return base


@dataclass
class ValueGrid:
    points: np.ndarray
    z: np.ndarray
    values: np.ndarray
    p_star: np.ndarray
    converged: np.ndarray
    flags: list
    results: list
    mode: str = "reach"
    lapse: float = 0.0

    def member(self, level=0.0):
        return self.values <= level

    def to_csv(self, path):
        n = self.points.shape[1]
        with open(path, "w") as fh:
            fh.write(",".join([f"x{i}" for i in range(n)] + ["value", "converged", "flags"]) + "\n")
            for x, v, c, fl in zip(self.points, self.values, self.converged, self.flags):
                fh.write(",".join([f"{t:.10g}" for t in x] + [f"{v:.12g}", str(int(c)), "|".join(fl)]) + "\n")


def solve_grid(spec: GameSpec, points, workers=1, chunk=4096):
    """Independent per-point solves; identical results for any worker count."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    chunks = [pts[i:i + chunk] for i in range(0, len(pts), chunk)] or [pts]
    if workers > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda c: _solve_batch(spec, c), chunks))
    else:
        parts = [_solve_batch(spec, c) for c in chunks]
    res = [r for part in parts for r in part]
    z = spec.to_z(pts)
    z_back = np.linalg.solve(spec.table.z_map, z.T).T
    if not np.allclose(z_back, pts, rtol=1e-8, atol=1e-8):
        raise RuntimeError("z-map not invertible to working precision")
    return ValueGrid(pts, z, np.array([r.value for r in res]), np.array([r.p_star for r in res]),
                     np.array([r.converged for r in res]), [r.flags for r in res], res,
                     spec.mode, spec.lapse)


def synthesize_control(spec: GameSpec, x, result: HopfResult, eps=1e-9):
    """Optimal control and worst-case disturbance at the window's first node."""
    p = np.asarray(result.p_star, dtype=float)
    tab = spec.table
    U, D = tab.U, tab.D
    flags = []
    if np.linalg.norm(p) <= eps:
        flags.append("ambiguous_gradient")
        return U.center.copy(), D.center.copy(), flags
    qu = tab.R1[0] @ p
    qd = tab.R2[0] @ p
    if spec.mode == "reach":
        u = U.argmax(qu)
        d = D.argmax(-qd)
    else:
        u = U.argmax(-qu)
        d = D.argmax(qd)
    return u, d, flags


def synthesize_batch(spec, results):
    P = np.array([r.p_star for r in results])
    tab = spec.table
    qu = P @ tab.R1[0].T
    qd = P @ tab.R2[0].T
    if spec.mode == "reach":
        u, d = tab.U.argmax(qu), tab.D.argmax(-qd)
    else:
        u, d = tab.U.argmax(-qu), tab.D.argmax(qd)
    small = np.linalg.norm(P, axis=1) <= 1e-9
    u[small] = tab.U.center
    d[small] = tab.D.center
    return u, d


def node_coefficients(table, mode, k):
    """Merged |g.p| coefficients of one node's integrand (box and 1-D sets only)."""
    rows, coefs = [], []
    for sgn, cset, M in table.node_terms(mode)[k]:
        l, Gs, a, nt = support_terms(cset, M)
        if nt:
            return None
        rows.append(Gs)
        coefs.append(sgn * a)
    G = np.vstack(rows)
    a = np.concatenate(coefs)
    return _merge_rows(G, a)[1]


def reach_convexity_check(spec: GameSpec, samples=1000, seed=0):
    """'convex', 'concave' or 'unknown' for the Reach integrand.

    Sufficient structural test: after merging parallel directions, every
    node's integrand is a signed sum of |g.p|. All coefficients >= 0 means
    convex (control dominates); all <= 0 means the adversary effectively
    plays alone, for which the Hopf formula is also exact. Round sets fall
    back to a sampled midpoint-convexity test, which can only say 'unknown'
    or 'convex'.
    """
    tab = spec.table
    signs = set()
    structural = True
    for k in range(tab.times.size):
        if tab.weights[k] == 0 and tab.times.size > 1:
            continue
        a = node_coefficients(tab, "reach", k)
        if a is None:
            structural = False
            break
        if np.any(a > 1e-12):
            signs.add(1)
        if np.any(a < -1e-12):
            signs.add(-1)
    if structural:
        if signs <= {1}:
            return "convex"
        if signs == {-1}:
            return "concave"
        return "unknown"
    rng = np.random.default_rng(seed)
    n = tab.state_dim
    p1 = rng.standard_normal((samples, n))
    p2 = rng.standard_normal((samples, n))
    h1 = tab.hamiltonians(p1, "reach")
    h2 = tab.hamiltonians(p2, "reach")
    hm = tab.hamiltonians(0.5 * (p1 + p2), "reach")
    if np.all(hm <= 0.5 * (h1 + h2) + 1e-10):
        return "convex"
    return "unknown"


def make_game(mode, model, fund, target, U, D, errbound=None, k0=0, k1=None, solver=None,
              system=None, label=""):
    from .lintv import hamiltonian_table
    tab = hamiltonian_table(model, fund, U, D, errbound, k0, k1)
    return GameSpec(mode, tab, target, solver or SolverConfig(), errbound, system, label)
