"""Plain-text artifact writers: CSV tables, JSON records, contours and SVG.

Contours come from a small marching-squares pass so that no plotting stack
is needed. Segments are returned unjoined; the SVG writer draws them as
separate line elements.
"""

import csv
import json
from pathlib import Path

import numpy as np

# edge index -> (corner a, corner b); corners 0..3 = (i,j),(i+1,j),(i+1,j+1),(i,j+1)
_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))
# case -> pairs of crossed edges (saddles resolved by the cell mean)
_CASES = {
    0: (), 15: (),
    1: ((3, 0),), 14: ((3, 0),),
    2: ((0, 1),), 13: ((0, 1),),
    4: ((1, 2),), 11: ((1, 2),),
    8: ((2, 3),), 7: ((2, 3),),
    3: ((3, 1),), 12: ((3, 1),),
    6: ((0, 2),), 9: ((0, 2),),
}


def contour_segments(xs, ys, V, level=0.0):
    """Line segments of {V = level} for values V[i, j] at (xs[i], ys[j])."""
    xs, ys, V = np.asarray(xs, float), np.asarray(ys, float), np.asarray(V, float)
    segs = []
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            c = np.array([V[i, j], V[i + 1, j], V[i + 1, j + 1], V[i, j + 1]]) - level
            pts = ((xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1]))
            case = sum(1 << k for k in range(4) if c[k] <= 0)
            if case in (5, 10):
                inside_mid = c.mean() <= 0
                if (case == 5) == inside_mid:
                    pairs = ((0, 1), (2, 3))
                else:
                    pairs = ((3, 0), (1, 2))
            else:
                pairs = _CASES[case]
            for ea, eb in pairs:
                a, b = _cross(pts, c, ea), _cross(pts, c, eb)
                if np.any(a != b):
                    segs.append((a, b))
    return np.array(segs).reshape(-1, 2, 2)


def _cross(pts, c, e):
    a, b = _EDGES[e]
    ca, cb = c[a], c[b]
    t = 0.5 if ca == cb else ca / (ca - cb)
    t = min(max(t, 0.0), 1.0)
    pa, pb = np.asarray(pts[a]), np.asarray(pts[b])
    return pa + t * (pb - pa)


def contour_points(segs):
    return np.asarray(segs).reshape(-1, 2)


def write_csv(path, header, rows, fmt="{:.10g}"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt.format(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


class SVG:
    """Minimal SVG canvas in data coordinates (y up)."""

    def __init__(self, lo, hi, size=480, margin=20):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.size = size
        self.margin = margin
        self.items = []

    def _map(self, p):
        p = np.asarray(p, float)
        s = (self.size - 2 * self.margin) / max(float((self.hi - self.lo).max()), 1e-12)
        x = self.margin + (p[..., 0] - self.lo[0]) * s
        y = self.size - self.margin - (p[..., 1] - self.lo[1]) * s
        return x, y

    def segments(self, segs, color="black", width=1.0):
        for a, b in np.asarray(segs).reshape(-1, 2, 2):
            (x1, x2), (y1, y2) = self._map(np.array([a, b]))
            self.items.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                              f'stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, pts, color="black", width=1.0):
        x, y = self._map(np.asarray(pts, float))
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"/>')

    def circle(self, c, r, color="black", width=1.0):
        x, y = self._map(np.asarray(c, float))
        s = (self.size - 2 * self.margin) / max(float((self.hi - self.lo).max()), 1e-12)
        self.items.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r * s:.2f}" fill="none" '
                          f'stroke="{color}" stroke-width="{width}"/>')

    def text(self, p, s, size=12):
        x, y = self._map(np.asarray(p, float))
        self.items.append(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}">{s}</text>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" height="{self.size}" '
                f'viewBox="0 0 {self.size} {self.size}">')
        return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *self.items,
                          "</svg>"]) + "\n"

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render())
        return path


PALETTE = ("#2a9d3f", "#1f5fbf", "#d08c00", "#b02a2a", "#6a3fb0", "#333333")
