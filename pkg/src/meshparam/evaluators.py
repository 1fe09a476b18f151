"""Objective providers: analytic toy, panel method, and a file-based adjoint hook."""
from __future__ import annotations

import csv
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvaluationError, EvaluatorFailure, ParseError
from .geometry import leading_trailing_indices, signed_area, vertex_normals
from .mesh import write_su2_mesh

log = logging.getLogger(__name__)

ANALYTIC = "analytic"
NORMAL_SENSITIVITY = "normal_sensitivity"
NONE = "none"

SURFACE_FILE = "surface_out.csv"
SENSITIVITY_FILE = "sensitivity_in.csv"
MESH_FILE = "mesh_out.su2"


@dataclass
class EvalResult:
    objective: float
    gradient_kind: str
    payload: np.ndarray | None = None  # (n, 2) vertex gradients or (n,) normal sensitivities
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gradient_kind not in (ANALYTIC, NORMAL_SENSITIVITY, NONE):
            raise ValueError(f"unknown gradient kind {self.gradient_kind!r}")
        if self.gradient_kind != NONE and self.payload is None:
            raise ValueError("gradient payload missing")

    def vertex_gradient(self, surface):
        """Per-vertex 2D gradient; normal sensitivities are spread along outward unit normals."""
        n = len(surface)
        if self.gradient_kind == NONE:
            return np.zeros((n, 2))
        p = np.asarray(self.payload, dtype=np.float64)
        if len(p) != n:
            raise EvaluationError(f"payload has {len(p)} entries for {n} surface vertices")
        if self.gradient_kind == ANALYTIC:
            return p.reshape(n, 2)
        return p[:, None] * vertex_normals(surface)


def _edges(pts):
    e = np.roll(pts, -1, axis=0) - pts
    ln = np.hypot(e[:, 0], e[:, 1])
    if np.any(ln <= 1e-14):
        raise EvaluationError("degenerate (zero-length) edge in surface loop")
    return e, ln


def toy_objective(surface, alpha=1.0, beta=0.0, area_target=None):
    """Discrete bending energy plus an area penalty, with its exact vertex gradient.

    Curvature at vertex i is the turning angle over the dual length
    s_i = (l_{i-1} + l_i)/2, so the energy is sum(theta_i**2 / s_i).
    """
    p = np.asarray(surface, dtype=np.float64)
    if len(p) < 3:
        raise EvaluationError("need at least three vertices")
    e, ln = _edges(p)
    a, b = np.roll(e, 1, axis=0), e  # incoming, outgoing edge at each vertex
    la = np.roll(ln, 1)
    c = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    d = np.sum(a * b, axis=1)
    theta = np.arctan2(c, d)
    s = 0.5 * (la + ln)
    bend = float(np.sum(theta**2 / s))

    area = signed_area(p)
    target = area if area_target is None else area_target
    obj = alpha * bend + beta * (area - target) ** 2

    # d theta from the atan2 of (cross, dot)
    r2 = c * c + d * d
    dc_da = np.column_stack([b[:, 1], -b[:, 0]])
    dc_db = np.column_stack([-a[:, 1], a[:, 0]])
    dth_da = (d[:, None] * dc_da - c[:, None] * b) / r2[:, None]
    dth_db = (d[:, None] * dc_db - c[:, None] * a) / r2[:, None]
    w_th = alpha * 2.0 * theta / s
    w_s = -alpha * theta**2 / s**2
    ga = w_th[:, None] * dth_da + 0.5 * w_s[:, None] * a / la[:, None]
    gb = w_th[:, None] * dth_db + 0.5 * w_s[:, None] * b / ln[:, None]
    # a = p_i - p_{i-1}, b = p_{i+1} - p_i
    grad = ga - gb + np.roll(gb, 1, axis=0) - np.roll(ga, -1, axis=0)

    nxt, prv = np.roll(p, -1, axis=0), np.roll(p, 1, axis=0)
    da = 0.5 * np.column_stack([nxt[:, 1] - prv[:, 1], prv[:, 0] - nxt[:, 0]])
    grad += 2.0 * beta * (area - target) * da
    return EvalResult(obj, ANALYTIC, grad, {"bending": bend, "area": area})


@dataclass
class ToyObjective:
    alpha: float = 1.0
    beta: float = 0.0
    area_target: float | None = None
    gradient_kind = ANALYTIC
    needs_mesh = False

    def __call__(self, surface, mesh=None):
        return toy_objective(surface, self.alpha, self.beta, self.area_target)


@dataclass
class NormalProjected:
    """Wrap an analytic evaluator so it reports sensitivities along outward normals only."""

    inner: object
    gradient_kind = NORMAL_SENSITIVITY
    needs_mesh = False

    def __call__(self, surface, mesh=None):
        r = self.inner(surface, mesh)
        sens = np.sum(r.vertex_gradient(surface) * vertex_normals(surface), axis=1)
        return EvalResult(r.objective, NORMAL_SENSITIVITY, sens, r.extras)


# ------------------------------------------------------------ panel method


def _panel_influence(xc, yc, x0, y0, x1, y1):
    """Unit source and unit vortex velocities at (xc, yc) from every panel, global frame.

    Returns (us, vs, uv, vv) each (n_points, n_panels).  Vortex strength is
    counter-clockwise positive.  Self terms are evaluated on the right of the
    panel, which is the outside of a counter-clockwise loop.
    """
    dx, dy = x1 - x0, y1 - y0
    L = np.hypot(dx, dy)
    tx, ty = dx / L, dy / L
    rx, ry = xc[:, None] - x0, yc[:, None] - y0
    xi = rx * tx + ry * ty
    eta = -rx * ty + ry * tx
    r1 = np.hypot(rx, ry)
    r2 = np.hypot(xi - L, eta)
    th1 = np.arctan2(eta, xi)
    th2 = np.arctan2(eta, xi - L)
    dth = th2 - th1
    lg = np.log(r1 / r2)
    if len(xc) == len(x0):
        idx = np.arange(len(xc))
        dth[idx, idx] = -math.pi
        lg[idx, idx] = 0.0
    k = 1.0 / (2 * math.pi)
    su, sv = k * lg, k * dth  # source, local frame
    vu, vv = -k * dth, k * lg  # vortex, local frame
    to_g = lambda u, v: (u * tx - v * ty, u * ty + v * tx)  # noqa: E731
    us, vs = to_g(su, sv)
    uv, vv_ = to_g(vu, vv)
    return us, vs, uv, vv_


def _solve(A, rhs, what):
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        sol = None
    if sol is None or not np.all(np.isfinite(sol)) or np.linalg.norm(A @ sol - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
        raise EvaluationError(f"singular {what} system (condition number {np.linalg.cond(A):.3e})")
    return sol


def _hess_smith(pts, alpha, v_inf):
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    xc, yc = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    L = np.hypot(x1 - x0, y1 - y0)
    tx, ty = (x1 - x0) / L, (y1 - y0) / L
    nx, ny = ty, -tx  # outward for a counter-clockwise loop
    us, vs, uv, vv = _panel_influence(xc, yc, x0, y0, x1, y1)
    n = len(pts)
    ux, uy = v_inf * math.cos(alpha), v_inf * math.sin(alpha)
    A = np.zeros((n + 1, n + 1))
    rhs = np.zeros(n + 1)
    A[:n, :n] = us * nx[:, None] + vs * ny[:, None]
    A[:n, n] = np.sum(uv * nx[:, None] + vv * ny[:, None], axis=1)
    rhs[:n] = -(ux * nx + uy * ny)
    # Kutta: equal speed leaving the trailing edge on first and last panels
    ts = lambda i: (us[i] * tx[i] + vs[i] * ty[i], np.sum(uv[i] * tx[i] + vv[i] * ty[i]), ux * tx[i] + uy * ty[i])  # noqa: E731
    a0, g0, f0 = ts(0)
    a1, g1, f1 = ts(n - 1)
    A[n, :n] = a0 + a1
    A[n, n] = g0 + g1
    rhs[n] = -(f0 + f1)
    sol = _solve(A, rhs, "panel")
    sigma, gamma = sol[:n], sol[n]
    vt = us @ sigma * tx + vs @ sigma * ty + gamma * np.sum(uv * tx[:, None] + vv * ty[:, None], axis=1) + ux * tx + uy * ty
    cp = 1.0 - (vt / v_inf) ** 2
    chord = pts[:, 0].max() - pts[:, 0].min()
    cl = -2.0 * gamma * L.sum() / (v_inf * chord)
    return cl, cp, L


def _camber_line(pts):
    le, _ = leading_trailing_indices(pts)
    upper = pts[: le + 1][::-1]
    lower = np.vstack([pts[le:], pts[:1]])
    order = np.argsort(lower[:, 0], kind="stable")
    yl = np.interp(upper[:, 0], lower[order, 0], lower[order, 1])
    return np.column_stack([upper[:, 0], 0.5 * (upper[:, 1] + yl)])


def _lumped_vortex(pts, alpha, v_inf):
    """Thin-surface branch: lumped vortices on the camber line (quarter/three-quarter points)."""
    c = _camber_line(pts)
    d = np.diff(c, axis=0)
    L = np.hypot(d[:, 0], d[:, 1])
    keep = L > 1e-14
    c0, d, L = c[:-1][keep], d[keep], L[keep]
    pv, pc = c0 + 0.25 * d, c0 + 0.75 * d
    nrm = np.column_stack([-d[:, 1], d[:, 0]]) / L[:, None]
    rx = pc[:, None, 0] - pv[None, :, 0]
    ry = pc[:, None, 1] - pv[None, :, 1]
    r2 = rx * rx + ry * ry
    A = (-ry * nrm[:, None, 0] + rx * nrm[:, None, 1]) / (2 * math.pi * r2)
    u = v_inf * np.array([math.cos(alpha), math.sin(alpha)])
    circ = _solve(A, -(nrm @ u), "lumped-vortex")
    chord = c[:, 0].max() - c[:, 0].min()
    cl = -2.0 * circ.sum() / (v_inf * chord)
    dcp = 2.0 * circ / (v_inf * L)
    return cl, dcp, L


def _is_thin(pts, tol=1e-9):
    per = np.sum(np.hypot(*np.diff(np.vstack([pts, pts[:1]]), axis=0).T))
    return abs(signed_area(pts)) < tol * per * per


def _panel_eval(pts, alpha, v_inf, thin):
    cl, cp, L = (_lumped_vortex if thin else _hess_smith)(pts, alpha, v_inf)
    return float(np.sum(cp * cp * L) / np.sum(L)), cl


def panel_method(surface, alpha_deg=0.0, v_inf=1.0, fd_step=1e-6, sensitivities=True):
    """Source+vortex (Hess-Smith) panel solution with a Kutta condition.

    The objective is the length-weighted mean of Cp**2; ``extras`` carries
    the lift coefficient.  Normal sensitivities come from one-sided finite
    differences of the objective with each vertex pushed out along its normal.
    """
    pts = np.asarray(surface, dtype=np.float64)
    if len(pts) < 32:
        raise EvaluationError("panel method needs at least 32 panels")
    _edges(pts)
    alpha = math.radians(alpha_deg)
    thin = _is_thin(pts)
    obj, cl = _panel_eval(pts, alpha, v_inf, thin)
    extras = {"cl": cl, "thin": thin}
    if not sensitivities:
        return EvalResult(obj, NONE, None, extras)
    nrm = vertex_normals(pts)
    sens = np.empty(len(pts))
    for i in range(len(pts)):
        q = pts.copy()
        q[i] += fd_step * nrm[i]
        sens[i] = (_panel_eval(q, alpha, v_inf, thin)[0] - obj) / fd_step
    return EvalResult(obj, NORMAL_SENSITIVITY, sens, extras)


@dataclass
class PanelMethod:
    alpha_deg: float = 0.0
    v_inf: float = 1.0
    fd_step: float = 1e-6
    gradient_kind = NORMAL_SENSITIVITY
    needs_mesh = False

    def __call__(self, surface, mesh=None):
        return panel_method(surface, self.alpha_deg, self.v_inf, self.fd_step)


# ------------------------------------------------------ file-based exchange


def _atomic_write(path, text):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_surface_csv(path, surface):
    nrm = vertex_normals(surface)
    lines = ["index,x,y,nx,ny"]
    lines += [f"{i},{p[0]!r},{p[1]!r},{n[0]!r},{n[1]!r}" for i, (p, n) in enumerate(zip(surface.tolist(), nrm.tolist()))]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_surface_csv(path):
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    arr = np.array([[float(v) for v in r[1:5]] for r in rows[1:]])
    return arr[:, :2], arr[:, 2:]


def write_sensitivity_csv(path, objective, sens):
    lines = ["index,objective,sens"]
    for i, s in enumerate(np.asarray(sens, dtype=np.float64).tolist()):
        lines.append(f"{i},{objective!r},{s!r}" if i == 0 else f"{i},,{s!r}")
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_sensitivity_csv(path, n_expected=None):
    text = Path(path).read_text().splitlines()
    if not text or [h.strip() for h in text[0].split(",")] != ["index", "objective", "sens"]:
        raise ParseError("expected header 'index,objective,sens'", 1)
    objective, sens = None, []
    for lineno, raw in enumerate(text[1:], start=2):
        if not raw.strip():
            continue
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != 3:
            raise ParseError(f"expected 3 columns, got {len(parts)}", lineno)
        try:
            idx = int(parts[0])
            if lineno == 2:
                objective = float(parts[1])
            elif parts[1]:
                raise ParseError("objective allowed on the first data row only", lineno)
            s = float(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if idx != len(sens) or not math.isfinite(s):
            raise ParseError(f"bad row index or value: {raw!r}", lineno)
        sens.append(s)
    if objective is None or not math.isfinite(objective):
        raise ParseError("missing objective on the first data row", 2)
    if n_expected is not None and len(sens) != n_expected:
        raise ParseError(f"expected {n_expected} sensitivities, got {len(sens)}", len(text))
    return objective, np.array(sens)


@dataclass
class FileAdjointExchange:
    """Hand the surface and mesh to an external solver through files in ``workdir``.

    Writes the mesh, then ``surface_out.csv`` (the ready signal), and blocks
    until ``sensitivity_in.csv`` appears.  The response file is consumed.
    """

    workdir: Path
    timeout: float = 3600.0
    poll_interval: float = 0.005
    gradient_kind = NORMAL_SENSITIVITY
    needs_mesh = True

    def __post_init__(self):
        self.workdir = Path(self.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

    def __call__(self, surface, mesh=None):
        surface = np.asarray(surface, dtype=np.float64)
        resp = self.workdir / SENSITIVITY_FILE
        resp.unlink(missing_ok=True)
        if mesh is not None:
            tmp = self.workdir / (MESH_FILE + ".tmp")
            write_su2_mesh(mesh, tmp)
            os.replace(tmp, self.workdir / MESH_FILE)
        write_surface_csv(self.workdir / SURFACE_FILE, surface)
        deadline = time.monotonic() + self.timeout
        while not resp.exists():
            if time.monotonic() > deadline:
                raise EvaluatorFailure(f"no {SENSITIVITY_FILE} in {self.workdir} after {self.timeout} s")
            time.sleep(self.poll_interval)
        objective, sens = read_sensitivity_csv(resp, len(surface))
        resp.unlink()
        return EvalResult(objective, NORMAL_SENSITIVITY, sens)


def file_adjoint_exchange(workdir, mesh, surface, timeout=3600.0):
    return FileAdjointExchange(workdir, timeout)(surface, mesh)


class LoopbackResponder:
    """Test-side stand-in for an external solver: answers each request with ``fn(surface, normals)``.

    ``fn`` returns ``(objective, normal_sensitivities)``.
    """

    def __init__(self, workdir, fn, poll_interval=0.002):
        self.workdir = Path(workdir)
        self.fn = fn
        self.poll_interval = poll_interval
        self.requests = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self.error = None

    def _run(self):
        req = self.workdir / SURFACE_FILE
        while not self._stop.is_set():
            if req.exists():
                try:
                    surface, normals = read_surface_csv(req)
                    req.unlink()
                    obj, sens = self.fn(surface, normals)
                    write_sensitivity_csv(self.workdir / SENSITIVITY_FILE, obj, sens)
                    self.requests += 1
                except Exception as exc:  # surfaced to the test through .error
                    self.error = exc
                    return
            else:
                time.sleep(self.poll_interval)

    def __enter__(self):
        self.workdir.mkdir(parents=True, exist_ok=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join(timeout=5)
