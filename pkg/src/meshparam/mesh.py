"""CFD meshes: data type, SU2 ASCII IO, O-mesh generation, sampling, quality."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingMarkerError, ParseError, UnsupportedDimensionError
from .geometry import AirfoilCurve, resample_loop

SU2_LINE, SU2_TRIANGLE, SU2_QUAD = 3, 5, 9
_KIND_SIZE = {SU2_LINE: 2, SU2_TRIANGLE: 3, SU2_QUAD: 4}
_SIZE_KIND = {3: SU2_TRIANGLE, 4: SU2_QUAD}

AIRFOIL = "airfoil"
FARFIELD = "farfield"


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CfdMesh:
    """Vertices plus fixed connectivity.

    ``elements`` is a tuple of vertex-index tuples (3 = triangle,
    4 = quad) in file order; ``markers`` maps a boundary name to a tuple
    of ``(i, j)`` edges.
    """

    vertices: np.ndarray
    elements: tuple
    markers: dict = field(default_factory=dict)

    def __post_init__(self):
        verts = _frozen(self.vertices, np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise ValueError("vertices must have shape (n, 2)")
        elements = tuple(tuple(int(i) for i in e) for e in self.elements)
        markers = {str(k): tuple((int(a), int(b)) for a, b in v) for k, v in dict(self.markers).items()}
        n = len(verts)
        for e in elements:
            if len(e) not in (3, 4):
                raise ValueError(f"unsupported element with {len(e)} vertices")
            if min(e) < 0 or max(e) >= n:
                raise ValueError(f"element {e} references a vertex out of range")
        for name, edges in markers.items():
            for a, b in edges:
                if not (0 <= a < n and 0 <= b < n):
                    raise ValueError(f"marker {name!r} edge {(a, b)} out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "markers", markers)

    @property
    def topology_id(self):
        h = hashlib.sha256()
        h.update(repr(self.elements).encode())
        h.update(repr(sorted(self.markers.items())).encode())
        return h.hexdigest()

    @property
    def n_vertices(self):
        return len(self.vertices)

    def with_vertices(self, vertices):
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise ValueError("deformation must keep the vertex count")
        return CfdMesh(vertices, self.elements, self.markers)

    def require_marker(self, name):
        if not self.markers.get(name):
            raise MissingMarkerError(f"mesh has no (or an empty) {name!r} marker")
        return self.markers[name]

    def marker_vertices(self, name):
        """Vertex indices of a marker, in chain order when the edges form a chain or loop."""
        edges = self.require_marker(name)
        nxt = {}
        for a, b in edges:
            nxt.setdefault(a, b)
        heads = set(nxt) - {b for _, b in edges}
        start = min(heads) if heads else edges[0][0]
        order = [start]
        seen = {start}
        while order[-1] in nxt and nxt[order[-1]] not in seen:
            order.append(nxt[order[-1]])
            seen.add(order[-1])
        if len(seen) != len({v for e in edges for v in e}):
            # not a single chain; fall back to sorted unique vertices
            return np.array(sorted({v for e in edges for v in e}), dtype=np.int64)
        return np.array(order, dtype=np.int64)

    def surface_loop(self):
        """Airfoil marker vertex indices, trailing edge first, counter-clockwise."""
        idx = self.marker_vertices(AIRFOIL)
        pts = self.vertices[idx]
        x, y = pts[:, 0], pts[:, 1]
        if 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
            idx = idx[::-1]
            pts = pts[::-1]
        return np.roll(idx, -int(np.argmax(pts[:, 0])))


# ------------------------------------------------------------------ SU2 IO


def read_su2_mesh(path):
    lines = Path(path).read_text().splitlines()
    pos = 0
    ndime = None
    elements = []
    vertices = None
    markers = {}

    def next_line():
        nonlocal pos
        while pos < len(lines):
            raw = lines[pos].split("%", 1)[0].strip()
            pos += 1
            if raw:
                return raw, pos
        return None, pos

    def keyword(raw):
        key, _, val = raw.partition("=")
        return key.strip().upper(), val.strip()

    while True:
        raw, lineno = next_line()
        if raw is None:
            break
        key, val = keyword(raw)
        if key == "NDIME":
            ndime = int(val)
            if ndime != 2:
                raise UnsupportedDimensionError(f"NDIME={ndime}; only 2D meshes are supported", line=lineno)
        elif key == "NELEM":
            for _ in range(int(val)):
                raw, lineno = next_line()
                elements.append(_parse_element(raw, lineno, volume=True))
        elif key == "NPOIN":
            count = int(val.split()[0])
            pts = []
            for _ in range(count):
                raw, lineno = next_line()
                if raw is None:
                    raise ParseError("unexpected end of file in NPOIN block", line=lineno)
                fields = raw.split()
                try:
                    pts.append((float(fields[0]), float(fields[1])))
                except (IndexError, ValueError):
                    raise ParseError(f"bad point record {raw!r}", line=lineno) from None
            vertices = np.array(pts, dtype=np.float64).reshape(-1, 2)
        elif key == "NMARK":
            for _ in range(int(val)):
                raw, lineno = next_line()
                if raw is None:
                    raise ParseError("unexpected end of file in NMARK block", line=lineno)
                k, tag = keyword(raw)
                if k != "MARKER_TAG":
                    raise ParseError(f"expected MARKER_TAG, got {raw!r}", line=lineno)
                raw, lineno = next_line()
                k, count = keyword(raw or "")
                if k != "MARKER_ELEMS":
                    raise ParseError(f"expected MARKER_ELEMS, got {raw!r}", line=lineno)
                edges = []
                for _ in range(int(count)):
                    raw, lineno = next_line()
                    edges.append(_parse_element(raw, lineno, volume=False))
                markers[tag] = tuple(edges)
        else:
            raise ParseError(f"unrecognised keyword {key!r}", line=lineno)
    if ndime is None:
        raise ParseError("missing NDIME")
    if vertices is None:
        raise ParseError("missing NPOIN block")
    return CfdMesh(vertices, tuple(elements), markers)


def _parse_element(raw, lineno, volume):
    if raw is None:
        raise ParseError("unexpected end of file", line=lineno)
    fields = raw.split()
    try:
        kind = int(fields[0])
    except (IndexError, ValueError):
        raise ParseError(f"bad element record {raw!r}", line=lineno) from None
    allowed = (SU2_TRIANGLE, SU2_QUAD) if volume else (SU2_LINE,)
    if kind not in allowed:
        raise ParseError(f"unsupported element kind {kind}", line=lineno)
    size = _KIND_SIZE[kind]
    try:
        return tuple(int(f) for f in fields[1 : 1 + size])
    except ValueError:
        raise ParseError(f"bad element record {raw!r}", line=lineno) from None


def write_su2_mesh(mesh, path):
    out = ["NDIME= 2", f"NELEM= {len(mesh.elements)}"]
    for i, e in enumerate(mesh.elements):
        out.append(" ".join(str(v) for v in (_SIZE_KIND[len(e)], *e, i)))
    out.append(f"NPOIN= {mesh.n_vertices}")
    for i, (x, y) in enumerate(mesh.vertices.tolist()):
        out.append(f"{x!r} {y!r} {i}")
    out.append(f"NMARK= {len(mesh.markers)}")
    for name, edges in mesh.markers.items():
        out.append(f"MARKER_TAG= {name}")
        out.append(f"MARKER_ELEMS= {len(edges)}")
        out.extend(f"{SU2_LINE} {a} {b}" for a, b in edges)
    Path(path).write_text("\n".join(out) + "\n")


# ------------------------------------------------------------ O-mesh build


def o_mesh(airfoil, n_radial=12, radius=5.0, first_height=4e-3, kind="quad", center=(0.5, 0.0)):
    """Structured O-mesh around a closed airfoil loop.

    Ring 0 is the airfoil loop itself; the outer ring is a circle of
    ``radius`` about ``center``.  Radial spacing grows geometrically from
    ``first_height`` near the wall.  ``kind="tri"`` splits every quad
    along its (v0, v2) diagonal.
    """
    pts = airfoil.points if isinstance(airfoil, AirfoilCurve) else np.asarray(airfoil, dtype=np.float64)
    n = len(pts)
    c = np.asarray(center, dtype=np.float64)
    rel = pts - c
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    far = c + radius * np.column_stack([np.cos(theta), np.sin(theta)])

    span = float(np.mean(np.linalg.norm(far - pts, axis=1)))
    ratio = _growth_ratio(first_height / span, n_radial)
    steps = first_height / span * ratio ** np.arange(n_radial)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    s /= s[-1]

    rings = [(1 - sk) * pts + sk * far for sk in s]
    verts = np.vstack(rings)

    def vid(k, i):
        return k * n + (i % n)

    elements = []
    for k in range(n_radial):
        for i in range(n):
            quad = (vid(k, i), vid(k + 1, i), vid(k + 1, i + 1), vid(k, i + 1))
            if kind == "quad":
                elements.append(quad)
            elif kind == "tri":
                elements.append((quad[0], quad[1], quad[2]))
                elements.append((quad[0], quad[2], quad[3]))
            else:
                raise ValueError(f"unknown element kind {kind!r}")
    markers = {
        AIRFOIL: tuple((vid(0, i), vid(0, i + 1)) for i in range(n)),
        FARFIELD: tuple((vid(n_radial, i), vid(n_radial, i + 1)) for i in range(n)),
    }
    return CfdMesh(verts, tuple(elements), markers)


def _growth_ratio(first_fraction, n):
    """Ratio r with first_fraction * sum(r**k, k<n) == 1 (bisection)."""
    if first_fraction * n >= 1.0:
        return 1.0
    lo, hi = 1.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        total = first_fraction * (mid**n - 1) / (mid - 1)
        lo, hi = (mid, hi) if total < 1.0 else (lo, mid)
    return 0.5 * (lo + hi)


# --------------------------------------------------------------- sampling


@dataclass(frozen=True)
class TemplateSample:
    """Template point sets: ordered surface loop, volume samples, fixed subset.

    ``fixed_index`` indexes into ``volume``; ``volume_ids`` are the mesh
    vertex ids the volume points were drawn from.
    """

    surface: np.ndarray
    volume: np.ndarray
    fixed_index: np.ndarray
    volume_ids: np.ndarray = None

    def __post_init__(self):
        for name in ("surface", "volume"):
            arr = _frozen(getattr(self, name), np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
                raise ValueError(f"{name} must be a non-empty (n, 2) array")
            object.__setattr__(self, name, arr)
        fixed = _frozen(self.fixed_index, np.int64)
        if len(fixed) == 0:
            raise ValueError("fixed set must be non-empty")
        if fixed.min() < 0 or fixed.max() >= len(self.volume):
            raise ValueError("fixed_index out of range of the volume set")
        object.__setattr__(self, "fixed_index", fixed)
        if self.volume_ids is not None:
            object.__setattr__(self, "volume_ids", _frozen(self.volume_ids, np.int64))

    @property
    def fixed(self):
        return self.volume[self.fixed_index]


def sample_template(mesh, n_surface=None, n_volume=None, fixed_band=0.0, seed=0):
    """Draw surface/volume/fixed sample sets from a template mesh.

    Surface points follow the airfoil marker (resampled in the index
    parameter if ``n_surface`` differs from the marker size).  Every
    non-airfoil vertex within ``fixed_band`` of the farfield marker goes
    into the fixed set and is always part of the volume; the rest of the
    volume is drawn without replacement from the remaining non-airfoil
    vertices.
    """
    mesh.require_marker(AIRFOIL)
    far_ids = np.unique(np.array(mesh.require_marker(FARFIELD)).ravel())
    loop = mesh.surface_loop()
    surf = mesh.vertices[loop]
    if n_surface is not None and n_surface != len(loop):
        surf = resample_loop(surf, n_surface)

    on_airfoil = np.zeros(mesh.n_vertices, dtype=bool)
    on_airfoil[np.unique(np.array(mesh.markers[AIRFOIL]).ravel())] = True
    candidates = np.flatnonzero(~on_airfoil)

    far_pts = mesh.vertices[far_ids]
    cand_pts = mesh.vertices[candidates]
    dist = _min_distance(cand_pts, far_pts)
    in_band = dist <= fixed_band
    band_ids = candidates[in_band]
    rest = candidates[~in_band]

    rng = np.random.default_rng(np.uint64(seed))
    if n_volume is None or n_volume >= len(candidates):
        chosen = rest
    else:
        n_rest = max(int(n_volume) - len(band_ids), 0)
        chosen = np.sort(rng.choice(rest, size=n_rest, replace=False))
    ids = np.concatenate([band_ids, chosen])
    ids.sort()
    fixed_index = np.flatnonzero(np.isin(ids, band_ids))
    return TemplateSample(surf, mesh.vertices[ids], fixed_index, ids)


def _min_distance(a, b, chunk=4096):
    out = np.empty(len(a))
    for s in range(0, len(a), chunk):
        d = a[s : s + chunk, None, :] - b[None, :, :]
        out[s : s + chunk] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", d, d), axis=1))
    return out


# ---------------------------------------------------------------- quality


@dataclass(frozen=True)
class MeshQualityReport:
    min_signed_area: float
    inverted_count: int
    max_skewness: float
    min_orthogonality: float
    aspect_ratio_range: tuple


def _triangle_areas(v, tri):
    a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def _element_metrics(v, conn):
    """Per-element (min sub-area, skewness, orthogonality, aspect) for one arity."""
    k = conn.shape[1]
    p = v[conn]  # (E, k, 2)
    if k == 3:
        sub = _triangle_areas(v, conn)[:, None]
    else:
        sub = np.column_stack([_triangle_areas(v, conn[:, [0, 1, 2]]), _triangle_areas(v, conn[:, [0, 2, 3]])])
    min_area = sub.min(axis=1)

    edges = np.roll(p, -1, axis=1) - p
    lengths = np.linalg.norm(edges, axis=2)
    safe = np.where(lengths == 0.0, 1.0, lengths)

    # interior corner angles
    prev_edge = -np.roll(edges, 1, axis=1)
    cosang = np.einsum("ekj,ekj->ek", edges, prev_edge) / (safe * np.roll(safe, 1, axis=1))
    ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    equi = 60.0 if k == 3 else 90.0
    skew = np.maximum((ang.max(axis=1) - equi) / (180.0 - equi), (equi - ang.min(axis=1)) / equi)

    # centroid-to-face vs. face normal
    centroid = p.mean(axis=1, keepdims=True)
    mid = p + 0.5 * edges
    to_face = mid - centroid
    normal = np.stack([edges[..., 1], -edges[..., 0]], axis=2)
    denom = safe * np.linalg.norm(to_face, axis=2)
    cos_o = np.einsum("ekj,ekj->ek", normal, to_face) / np.where(denom == 0.0, 1.0, denom)
    ortho = np.clip(cos_o.min(axis=1), 0.0, 1.0)

    aspect = lengths.max(axis=1) / np.where(lengths.min(axis=1) == 0.0, np.inf, lengths.min(axis=1))
    return min_area, skew, ortho, aspect


def mesh_quality(mesh):
    v = mesh.vertices
    groups = {}
    for e in mesh.elements:
        groups.setdefault(len(e), []).append(e)
    areas, skews, orthos, aspects = [], [], [], []
    for k in sorted(groups):
        a, s, o, r = _element_metrics(v, np.array(groups[k], dtype=np.int64))
        areas.append(a)
        skews.append(s)
        orthos.append(o)
        aspects.append(r)
    if not areas:
        return MeshQualityReport(float("inf"), 0, 0.0, 1.0, (1.0, 1.0))
    areas = np.concatenate(areas)
    aspects = np.concatenate(aspects)
    return MeshQualityReport(
        min_signed_area=float(areas.min()),
        inverted_count=int(np.count_nonzero(areas <= 0.0)),
        max_skewness=float(np.concatenate(skews).max()),
        min_orthogonality=float(np.concatenate(orthos).min()),
        aspect_ratio_range=(float(aspects.min()), float(aspects.max())),
    )
