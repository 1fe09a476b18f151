"""Minimal static SVG writers (no plotting dependency)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

_W, _H, _PAD = 800, 400, 30


def _frame(xmin, xmax, ymin, ymax, keep_aspect=True):
    sx = (_W - 2 * _PAD) / max(xmax - xmin, 1e-12)
    sy = (_H - 2 * _PAD) / max(ymax - ymin, 1e-12)
    if keep_aspect:
        sx = sy = min(sx, sy)
    return lambda x, y: (_PAD + (x - xmin) * sx, _H - _PAD - (y - ymin) * sy)


def _doc(body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n{body}</svg>\n'
    )


def _polyline(pts, tf, color, closed=False, width=1.5):
    xy = " ".join(f"{a:.2f},{b:.2f}" for a, b in (tf(x, y) for x, y in pts))
    tag = "polygon" if closed else "polyline"
    return f'<{tag} points="{xy}" fill="none" stroke="{color}" stroke-width="{width}"/>\n'


def airfoil_overlay(path, curves, colors=("black", "red", "blue", "green"), title=""):
    """Closed loops drawn over each other: first black (initial), second red (optimized)."""
    allp = np.vstack([np.asarray(c) for c in curves])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    tf = _frame(lo[0], hi[0], lo[1], hi[1])
    body = "".join(_polyline(np.asarray(c), tf, colors[i % len(colors)], closed=True) for i, c in enumerate(curves))
    if title:
        body += f'<text x="{_PAD}" y="20" font-family="sans-serif" font-size="14">{title}</text>\n'
    Path(path).write_text(_doc(body))


def loss_curves(path, columns, log_scale=True):
    """``columns`` maps a label to a 1D series; plotted against its index."""
    series = {k: np.asarray(v, dtype=np.float64) for k, v in columns.items() if len(v)}
    tr = (lambda v: np.log10(np.maximum(v, 1e-300))) if log_scale else (lambda v: v)
    ys = np.concatenate([tr(v) for v in series.values()]) if series else np.zeros(1)
    n = max((len(v) for v in series.values()), default=1)
    tf = _frame(0, max(n - 1, 1), ys.min(), ys.max(), keep_aspect=False)
    palette = ("black", "red", "blue", "green", "orange", "purple")
    body = ""
    for i, (label, v) in enumerate(series.items()):
        c = palette[i % len(palette)]
        body += _polyline(np.column_stack([np.arange(len(v)), tr(v)]), tf, c, width=1.0)
        body += f'<text x="{_W - 160}" y="{20 + 16 * i}" font-family="sans-serif" font-size="12" fill="{c}">{label}</text>\n'
    Path(path).write_text(_doc(body))


def mesh_wireframe(path, mesh, window=(-0.2, 1.2, -0.4, 0.4)):
    """Element edges inside ``window`` (x0, x1, y0, y1)."""
    tf = _frame(*window)
    v = mesh.vertices
    x0, x1, y0, y1 = window
    body = []
    for el in mesh.elements:
        p = v[list(el)]
        if np.any((p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)):
            body.append(_polyline(p, tf, "gray", closed=True, width=0.4))
    Path(path).write_text(_doc("".join(body)))
