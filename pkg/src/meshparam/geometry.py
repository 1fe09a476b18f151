"""Airfoil curves: NACA generation, Selig .dat IO and loop utilities.

Curves are stored as closed loops *without* a repeated closing point,
ordered trailing edge -> upper surface -> leading edge -> lower surface,
which is counter-clockwise.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, DesignationError, FormatVariantError, ParseError

X_TOLERANCE = 1e-6

# a4 = -0.1036 closes the trailing edge exactly
_THICKNESS_COEFFS = (0.2969, -0.1260, -0.3516, 0.2843, -0.1036)

# standard non-reflex 5-digit camber lines: P digit -> (m, k1)
_FIVE_DIGIT_CAMBER = {
    1: (0.0580, 361.400),
    2: (0.1260, 51.640),
    3: (0.2025, 15.957),
    4: (0.2900, 6.643),
    5: (0.3910, 3.230),
}


@dataclass(frozen=True)
class AirfoilCurve:
    points: np.ndarray
    name: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
        if len(pts) < 3:
            raise DegenerateGeometryError("an airfoil loop needs at least 3 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("airfoil points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]

    def with_points(self, points, name=None):
        return AirfoilCurve(points, self.name if name is None else name)


# --------------------------------------------------------------------- NACA


def naca_thickness(x, t):
    """Half-thickness of the symmetric 4-digit section with a closed trailing edge."""
    x = np.asarray(x, dtype=np.float64)
    a0, a1, a2, a3, a4 = _THICKNESS_COEFFS
    return 5.0 * t * (a0 * np.sqrt(x) + a1 * x + a2 * x**2 + a3 * x**3 + a4 * x**4)


def _parse_designation(code):
    code = code.strip().upper()
    if code.startswith("NACA"):
        code = code[4:].strip().lstrip("-").strip()
    if not re.fullmatch(r"\d{4}|\d{5}", code):
        raise DesignationError(f"not a NACA 4- or 5-digit designation: {code!r}")
    return code


def naca_camber(code, x):
    """Camber line ordinate and slope for a 4- or 5-digit designation."""
    code = _parse_designation(code)
    x = np.asarray(x, dtype=np.float64)
    if len(code) == 4:
        m = int(code[0]) / 100.0
        p = int(code[1]) / 10.0
        if m == 0.0:
            return np.zeros_like(x), np.zeros_like(x)
        if p == 0.0:
            raise DesignationError(f"cambered 4-digit section needs a nonzero camber position: {code}")
        fwd = x < p
        yc = np.where(fwd, m / p**2 * (2 * p * x - x**2), m / (1 - p) ** 2 * ((1 - 2 * p) + 2 * p * x - x**2))
        dyc = np.where(fwd, 2 * m / p**2 * (p - x), 2 * m / (1 - p) ** 2 * (p - x))
        return yc, dyc

    design_cl = 0.15 * int(code[0])
    pos = int(code[1])
    if code[2] != "0":
        raise DesignationError(f"reflexed 5-digit camber lines are not supported: {code}")
    if pos not in _FIVE_DIGIT_CAMBER:
        raise DesignationError(f"5-digit camber position digit must be 1-5: {code}")
    m, k1 = _FIVE_DIGIT_CAMBER[pos]
    scale = design_cl / 0.3
    fwd = x < m
    yc = np.where(fwd, k1 / 6 * (x**3 - 3 * m * x**2 + m**2 * (3 - m) * x), k1 * m**3 / 6 * (1 - x))
    dyc = np.where(fwd, k1 / 6 * (3 * x**2 - 6 * m * x + m**2 * (3 - m)), -k1 * m**3 / 6 * np.ones_like(x))
    return scale * yc, scale * dyc


def naca_generate(code, n_points=200, spacing="cosine"):
    """Closed NACA 4/5-digit loop with ``n_points`` distinct points.

    The loop starts at the trailing edge (1, 0), runs over the upper
    surface to the leading edge and back along the lower surface.
    ``n_points`` must be even so upper and lower stations coincide.
    """
    code = _parse_designation(code)
    if n_points < 8:
        raise ValueError("n_points must be at least 8")
    if n_points % 2:
        raise ValueError("n_points must be even")
    half = n_points // 2
    if spacing == "cosine":
        x = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, half + 1)))
    elif spacing == "uniform":
        x = np.linspace(0.0, 1.0, half + 1)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    x[0], x[-1] = 0.0, 1.0

    t = int(code[-2:]) / 100.0
    yt = naca_thickness(x, t)
    yt[0] = yt[-1] = 0.0
    yc, dyc = naca_camber(code, x)
    theta = np.arctan(dyc)
    xu, yu = x - yt * np.sin(theta), yc + yt * np.cos(theta)
    xl, yl = x + yt * np.sin(theta), yc - yt * np.cos(theta)

    upper = np.column_stack([xu, yu])[::-1]  # TE -> LE, includes both
    lower = np.column_stack([xl, yl])[1:-1]  # LE+1 -> TE-1
    pts = np.vstack([upper, lower])
    return AirfoilCurve(pts, f"NACA {code}")


def flat_plate(n_points=200):
    """Zero-thickness unit chord plate as a (degenerate) closed loop."""
    return naca_generate("0000", n_points)


def random_naca_codes(n, seed=0, exclude=(), five_digit_fraction=0.2):
    """Distinct seeded 4/5-digit designations of moderate camber and thickness."""
    rng = np.random.default_rng(np.uint64(seed))
    out, seen = [], set(exclude)
    while len(out) < n:
        t = int(rng.integers(8, 19))
        if rng.random() < five_digit_fraction:
            code = f"{int(rng.integers(1, 4))}{int(rng.integers(1, 6))}0{t:02d}"
        else:
            m = int(rng.integers(0, 6))
            p = int(rng.integers(2, 7)) if m else 0
            code = f"{m}{p}{t:02d}"
        if code not in seen:
            seen.add(code)
            out.append(code)
    return out


def naca_corpus(n, n_points=200, seed=0, exclude=()):
    return [naca_generate(c, n_points) for c in random_naca_codes(n, seed, exclude)]


# ---------------------------------------------------------------- Selig IO

_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eEdD][-+]?\d+)?"


def load_dat(path):
    """Read a Selig-format airfoil file.

    The result is normalized so the leading edge sits at (0, 0) and the
    trailing edge at (1, 0), with duplicate consecutive points removed
    and counter-clockwise orientation enforced.
    """
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    name = lines[0].strip()
    rows = []
    seen_blank = False
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text:
            if rows:
                seen_blank = True
            continue
        if seen_blank:
            raise FormatVariantError("blank line between coordinate blocks (Lednicer layout) is not supported", line=lineno)
        fields = text.replace(",", " ").split()
        if len(fields) != 2 or not all(re.fullmatch(_FLOAT, f) for f in fields):
            raise ParseError(f"expected two numbers, got {text!r}", line=lineno)
        x, y = (float(f.replace("d", "e").replace("D", "e")) for f in fields)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError("non-finite coordinate", line=lineno)
        if not rows and (x > 1.0 + 1e-3 and y > 1.0 + 1e-3) and x.is_integer() and y.is_integer():
            raise FormatVariantError("point-count header (Lednicer layout) is not supported", line=lineno)
        rows.append((x, y))

    pts = np.asarray(rows, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise DegenerateGeometryError("no coordinates")
    # trailing edge from the raw end points, before the closing repeat is dropped
    te = 0.5 * (pts[0] + pts[-1])
    pts = _dedupe(pts)
    if len(pts) < 3:
        raise DegenerateGeometryError("fewer than 3 distinct points")
    return AirfoilCurve(normalize_loop(pts, te), name)


def save_dat(curve, path):
    """Write Selig layout; the trailing point repeats the first to close the loop."""
    out = [curve.name or "airfoil"]
    pts = np.vstack([curve.points, curve.points[:1]])
    out.extend(f"{x!r} {y!r}" for x, y in pts.tolist())
    Path(path).write_text("\n".join(out) + "\n")


def _dedupe(pts):
    if len(pts) == 0:
        return pts
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts = pts[keep]
    while len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
        pts = pts[:-1]
    return pts


def normalize_loop(pts, te=None):
    """Rotate/scale so the leading edge maps to (0, 0) and the trailing edge to (1, 0).

    ``te`` defaults to the midpoint of the end points; the leading edge is
    the point farthest from it.  Clockwise loops are reversed in place
    (first point kept).
    """
    pts = np.asarray(pts, dtype=np.float64)
    te = 0.5 * (pts[0] + pts[-1]) if te is None else np.asarray(te, dtype=np.float64)
    le = pts[np.argmax(np.linalg.norm(pts - te, axis=1))]
    chord_vec = te - le
    chord = float(np.hypot(*chord_vec))
    if chord == 0.0:
        raise DegenerateGeometryError("zero chord")
    if le[0] == 0.0 and le[1] == 0.0 and te[0] == 1.0 and te[1] == 0.0:
        out = pts.copy()
    else:
        c, s = chord_vec / chord
        rot = np.array([[c, s], [-s, c]])
        out = (pts - le) @ rot.T / chord
    if signed_area(out) < 0:
        out = np.vstack([out[:1], out[:0:-1]])
    return out


# ----------------------------------------------------------- loop helpers


def signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def vertex_normals(pts):
    """Outward unit normals of a counter-clockwise loop (mean of adjacent edge normals)."""
    pts = np.asarray(pts, dtype=np.float64)
    edge = np.roll(pts, -1, axis=0) - pts
    en = np.column_stack([edge[:, 1], -edge[:, 0]])
    en /= np.linalg.norm(en, axis=1, keepdims=True)
    vn = en + np.roll(en, 1, axis=0)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.where(norm == 0.0, 1.0, norm)


def is_simple(pts):
    """True if the closed polygon has no crossing non-adjacent edges."""
    p = np.asarray(pts, dtype=np.float64)
    q = np.roll(p, -1, axis=0)
    n = len(p)
    d = q - p

    def cross(a, b):
        return a[..., 0] * b[..., 1] - a[..., 1] * b[...,0]

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    r, s = d[i], d[j]
    qp = p[j] - p[i]
    denom = cross(r, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cross(qp, s) / denom
        u = cross(qp, r) / denom
    hit = (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return not bool(np.any(hit))


def leading_trailing_indices(pts):
    """Index of the trailing edge (max x) and leading edge (farthest from it)."""
    pts = np.asarray(pts)
    te = int(np.argmax(pts[:, 0]))
    le = int(np.argmax(np.linalg.norm(pts - pts[te], axis=1)))
    return le, te


def resample_loop(pts, n):
    """Resample a closed loop to ``n`` points, uniform in the vertex-index parameter.

    Keeps the clustering of the source loop (cosine spacing stays cosine-like).
    """
    pts = np.asarray(pts, dtype=np.float64)
    m = len(pts)
    closed = np.vstack([pts, pts[:1]])
    s = np.linspace(0.0, m, n, endpoint=False)
    k = np.floor(s).astype(int)
    f = (s - k)[:, None]
    return (1 - f) * closed[k] + f * closed[k + 1]


def random_bump_deform(curve, n_bumps=5, max_amplitude=0.05, width=0.08, seed=0):
    """Template surface displaced along normals by seeded Gaussian bumps.

    Bump centres are drawn in arc length; the leading and trailing edge
    points stay put so the chord is unchanged.
    """
    rng = np.random.default_rng(seed)
    pts = curve.points
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    perimeter = float(seg.sum())
    centres = rng.uniform(0.1, 0.9, n_bumps) * perimeter
    amps = rng.uniform(-max_amplitude, max_amplitude, n_bumps)
    disp = np.zeros(len(pts))
    for c, a in zip(centres, amps):
        d = np.abs(s - c)
        d = np.minimum(d, perimeter - d)
        disp += a * np.exp(-0.5 * (d / width) ** 2)
    limit = np.abs(disp).max()
    if limit > max_amplitude:
        disp *= max_amplitude / limit
    le, te = leading_trailing_indices(pts)
    # taper to zero at the edges
    taper = np.minimum(np.minimum(np.abs(s - s[le]), s), perimeter - s)
    disp *= 1.0 - np.exp(-((taper / (0.5 * width)) ** 2))
    new = pts + disp[:, None] * vertex_normals(pts)
    return AirfoilCurve(new, f"{curve.name} bumped(seed={seed})")
