"""Vectorized interval arithmetic on (lo, hi) array pairs.

Every function takes and returns plain numpy arrays so the system
definitions can build enclosures without a wrapper type.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def hull(lo_a, hi_a, lo_b, hi_b):
    return np.minimum(lo_a, lo_b), np.maximum(hi_a, hi_b)


def add(alo, ahi, blo, bhi):
    return alo + blo, ahi + bhi


def sub(alo, ahi, blo, bhi):
    return alo - bhi, ahi - blo


def scale(c, lo, hi):
    """Multiply an interval by a real scalar (or array of scalars)."""
    a, b = c * lo, c * hi
    return np.minimum(a, b), np.maximum(a, b)


def mul(alo, ahi, blo, bhi):
    cands = np.stack([alo * blo, alo * bhi, ahi * blo, ahi * bhi])
    return cands.min(axis=0), cands.max(axis=0)


def square(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    a, b = lo * lo, hi * hi
    top = np.maximum(a, b)
    bot = np.where((lo <= 0.0) & (hi >= 0.0), 0.0, np.minimum(a, b))
    return bot, top


def absmax(lo, hi):
    return np.maximum(np.abs(lo), np.abs(hi))


def _contains_mod(lo, hi, phase):
    # does [lo, hi] contain phase + 2*pi*k for some integer k
    k = np.ceil((lo - phase) / TWO_PI)
    return phase + TWO_PI * k <= hi


def cos(lo, hi):
    """Exact range of cos over [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    clo, chi = np.cos(lo), np.cos(hi)
    top = np.where(_contains_mod(lo, hi, 0.0), 1.0, np.maximum(clo, chi))
    bot = np.where(_contains_mod(lo, hi, np.pi), -1.0, np.minimum(clo, chi))
    wide = (hi - lo) >= TWO_PI
    return np.where(wide, -1.0, bot), np.where(wide, 1.0, top)


def sin(lo, hi):
    return cos(np.asarray(lo) - np.pi / 2.0, np.asarray(hi) - np.pi / 2.0)


def matvec(M, lo, hi):
    """Enclosure of {M x : lo <= x <= hi} for a real matrix M (..., m, n)."""
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    c = np.einsum("...ij,...j->...i", M, mid)
    r = np.einsum("...ij,...j->...i", np.abs(M), rad)
    return c - r, c + r


def contains(lo, hi, inner_lo, inner_hi):
    return bool(np.all(lo <= inner_lo) and np.all(inner_hi <= hi))
