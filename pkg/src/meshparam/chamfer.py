"""Symmetric chamfer distance with a gradient for the first point set."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

# pairwise-matrix path below this many (n*m) pairs; KD-tree above
_DENSE_LIMIT = 4_000_000


def _nearest(src, dst):
    """Index of the nearest ``dst`` point for every ``src`` point (lowest index on ties)."""
    if len(src) * len(dst) <= _DENSE_LIMIT:
        d = src[:, None, :] - dst[None, :, :]
        return np.argmin(np.einsum("ijk,ijk->ij", d, d), axis=1)
    _, idx = cKDTree(dst).query(src, k=1)
    return idx


def chamfer_distance(a, b, return_grad=False):
    """Mean squared nearest-neighbour distance, a->b plus b->a.

    With ``return_grad`` also returns d(chamfer)/d(a), routed through the
    selected nearest pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer_distance needs two non-empty point sets")
    ia = _nearest(a, b)
    ib = _nearest(b, a)
    da = a - b[ia]
    db = b - a[ib]
    value = float(np.mean(np.sum(da * da, axis=1)) + np.mean(np.sum(db * db, axis=1)))
    if not return_grad:
        return value
    grad = 2.0 * da / len(a)
    np.add.at(grad, ib, -2.0 * db / len(b))
    return value, grad

