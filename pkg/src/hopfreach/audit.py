"""Conservativeness audits of Hopf sets against the grid oracle."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .baseline_dp import dp_gradient_norm, dp_query
from .export import contour_points, contour_segments


@dataclass
class AuditReport:
    mode: str
    lapse: float
    points: int
    inside_hopf: int
    inside_dp: int
    violations: int
    band_cells: float
    violating: np.ndarray = field(repr=False, default=None)
    dp_values: np.ndarray = field(repr=False, default=None)
    tol: np.ndarray = field(repr=False, default=None)

    @property
    def passed(self):
        return self.violations == 0

    def rows(self, pts, hopf_values):
        for k, x in enumerate(pts):
            yield list(x) + [hopf_values[k], self.dp_values[k], self.tol[k], int(self.violating[k])]


def value_band(dp, lapse, points, spacing, cells=2.0):
    """Value tolerance equivalent to ``cells`` cells of size ``spacing``."""
    return cells * float(spacing) * dp_gradient_norm(dp, lapse, points)


def audit(mode, hopf_values, dp, lapse, points, cells=2.0, spacing=None):
    """Reach: {V_hopf <= 0} must sit inside {V_dp <= tol}.
    Avoid: {V_dp <= 0} must sit inside {V_hopf <= tol}.

    ``spacing`` is the audit-grid cell size used for the band (defaults to
    the oracle's own spacing).
    """
    V = np.asarray(hopf_values, float)
    Vdp = dp_query(dp, points, lapse)
    h = float(max(dp.spec.spacing)) if spacing is None else float(spacing)
    tol = value_band(dp, lapse, points, h, cells)
    if mode == "reach":
        bad = (V <= 0) & (Vdp > tol)
    elif mode == "avoid":
        bad = (Vdp <= 0) & (V > tol)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rep = AuditReport(mode, float(lapse), int(V.size), int((V <= 0).sum()), int((Vdp <= 0).sum()),
                      int(bad.sum()), float(cells), bad, Vdp, tol)
    return rep


def level_set_hausdorff(xs, ys, Va, Vb, level=0.0):
    """Symmetric Hausdorff distance between two zero-level contours on one grid."""
    pa = contour_points(contour_segments(xs, ys, Va, level))
    pb = contour_points(contour_segments(xs, ys, Vb, level))
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return np.inf
    return max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0])


def ordering_violations(inner, outer):
    """Points in ``inner`` that are missing from ``outer``."""
    return int(np.sum(np.asarray(inner, bool) & ~np.asarray(outer, bool)))
