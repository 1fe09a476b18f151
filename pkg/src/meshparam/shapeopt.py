"""Constrained gradient-based shape optimization over a latent vector or network weights."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .chamfer import chamfer_distance
from .dmm import DmmConfig, fit_dmm
from .errors import ContractError, EvaluationError, EvaluatorFailure, ReparameterizationError
from .evaluators import NORMAL_SENSITIVITY
from .geometry import leading_trailing_indices
from .losses import Batch, LossWeights, loss_grad_weights
from .lsm import infer_latent
from .mesh import mesh_quality
from .optim import Adam

log = logging.getLogger(__name__)

T1 = "T1_bounding"
M1 = "M1_latent_norm"
M2 = "M2_edges"
M3 = "M3_chord"
M4 = "M4_mesh_reg"
E1 = "E1_horizontal"
KINDS = (T1, M1, M2, M3, M4, E1)

DEFAULT_WEIGHTS = {T1: 1e3, M1: 1e-4, M2: 1e2, M3: 1e2, M4: 1e-2, E1: 1.0}


@dataclass(frozen=True)
class ConstraintSpec:
    kind: str
    weight: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown constraint kind {self.kind!r}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ContractError(f"constraint weight must be finite and >= 0, got {self.weight}")


# ------------------------------------------------------------- constraints
# each returns (value, gradient w.r.t. its array argument)


def constraint_T1(surface, initial):
    """Mean squared shortfall of |y| below its initial value (one-sided)."""
    surface, initial = np.asarray(surface, dtype=np.float64), np.asarray(initial, dtype=np.float64)
    if surface.shape != initial.shape:
        raise ValueError(f"size mismatch: {surface.shape} vs {initial.shape}")
    n = len(surface)
    y = surface[:, 1]
    r = np.maximum(np.abs(initial[:, 1]) - np.abs(y), 0.0)
    grad = np.zeros_like(surface)
    grad[:, 1] = -2.0 * r * np.sign(y) / n
    return float(np.sum(r * r) / n), grad


def constraint_M1(z):
    z = np.asarray(z, dtype=np.float64)
    return float(z @ z), 2.0 * z


def constraint_M2_M3(surface, le, te):
    """Anchored leading/trailing edges, and x kept inside the unit chord."""
    s = np.asarray(surface, dtype=np.float64)
    g2 = np.zeros_like(s)
    d_le = s[le] - (0.0, 0.0)
    d_te = s[te] - (1.0, 0.0)
    m2 = float(d_le @ d_le + d_te @ d_te)
    g2[le] += 2.0 * d_le
    g2[te] += 2.0 * d_te
    x = s[:, 0]
    out = np.maximum(-x, 0.0) + np.maximum(x - 1.0, 0.0)
    m3 = float(np.sum(out * out))
    g3 = np.zeros_like(s)
    g3[:, 0] = 2.0 * out * (np.where(x > 1.0, 1.0, 0.0) - np.where(x < 0.0, 1.0, 0.0))
    return (m2, g2), (m3, g3)


def constraint_E1(displacement):
    d = np.asarray(displacement, dtype=np.float64)
    g = np.zeros_like(d)
    g[:, 0] = 2.0 * d[:, 0]
    return float(np.sum(d[:, 0] ** 2)), g


def default_constraints(model_kind, gradient_kind, weights=None):
    """Constraint set per model/evaluator pairing; mesh regularization joins for adjoint-type evaluators."""
    w = {**DEFAULT_WEIGHTS, **(weights or {})}
    if model_kind == "lsm":
        kinds = [T1, M1]
    elif model_kind == "dmm":
        kinds = [T1, M2, M3]
    else:
        raise ContractError(f"unknown model kind {model_kind!r}")
    if gradient_kind == NORMAL_SENSITIVITY:
        kinds += [E1, M4]
    return [ConstraintSpec(k, w[k]) for k in kinds]


# ------------------------------------------------------------------ models


@dataclass
class LsmModel:
    ckpt: object
    z: np.ndarray
    kind = "lsm"

    @property
    def net(self):
        return self.ckpt.net

    def design(self):
        return [self.z]

    def with_design(self, d):
        return replace(self, z=d[0])

    def latent(self):
        return self.z

    def copy(self):
        return replace(self, z=self.z.copy())


@dataclass
class DmmModel:
    net: object
    config: DmmConfig = field(default_factory=DmmConfig)
    kind = "dmm"

    def design(self):
        return self.net.params

    def with_design(self, d):
        net = self.net.copy()
        net.params = [p.copy() for p in d]
        return replace(self, net=net)

    def latent(self):
        return None

    def copy(self):
        return replace(self, net=self.net.copy())


def decode_surface(model, points):
    return points + model.net.forward(model.latent(), points)


def decode_mesh(model, mesh):
    return mesh.with_vertices(decode_surface(model, mesh.vertices))


# ---------------------------------------------------------------- driver


@dataclass
class OptimConfig:
    steps: int = 200
    lr_latent: float = 1e-3
    lr_weights: float = 1e-5
    reuse_interval: int = 10
    clip_factor: float = 1e2
    stage_patience: int = 20
    stage_rel_tol: float = 1e-4
    reparam_factor: float = 10.0
    reparam_window: int = 20
    reparam_chamfer: float = 1e-5
    reparam_lr: float = 1e-5
    reparam_reg_scale: float = 1.0
    m4_batch: int = 512
    force_reparam_at: tuple = ()
    seed: int = 0


@dataclass
class Stage:
    """A template sample plus (optionally) its full mesh."""

    sample: object
    mesh: object = None


@dataclass
class OptimizationState:
    model: object
    evaluator: object
    constraints: list
    step: int = 0
    objective_log: list = field(default_factory=list)
    template_stage: str = "coarse"
    reparam_count: int = 0
    grad_reuse_age: int = 0
    discarded: list = field(default_factory=list)  # steps whose external gradient was dropped
    reparam_events: list = field(default_factory=list)  # dicts: step, chamfer, before, after surfaces

    @property
    def design(self):
        return self.model.design()

    def column(self, key):
        return np.array([row[key] for row in self.objective_log])


def _square_objective(cd, g):
    # ||C_d||^2 and its vertex gradient
    return cd * cd, 2.0 * cd * g


class _Driver:
    def __init__(self, model, evaluator, coarse, fine, constraints, cfg):
        self.cfg = cfg
        self.evaluator = evaluator
        self.external = getattr(evaluator, "gradient_kind", None) == NORMAL_SENSITIVITY
        if constraints is None:
            constraints = default_constraints(model.kind, evaluator.gradient_kind)
        for c in constraints:
            if c.kind == M1 and model.kind != "lsm":
                raise ContractError("M1_latent_norm applies to the latent model only")
            if c.kind in (M2, M3) and model.kind != "dmm":
                raise ContractError(f"{c.kind} applies to the direct-mapping model only")
        self.weights = {c.kind: c.weight for c in constraints}
        self.state = OptimizationState(model.copy(), evaluator, list(constraints))
        self.stages = {"coarse": coarse, "fine": fine}
        self.rng = np.random.default_rng(np.uint64(cfg.seed))
        self._set_stage("coarse")
        self.opt = self._new_optimizer()
        self.cached = None  # (objective, vertex gradient) of the last accepted evaluation
        self.norms = []
        self.refresh_objectives = []
        self.m4_hist = []
        self.retrying = False

    def _new_optimizer(self):
        lr = self.cfg.lr_latent if self.state.model.kind == "lsm" else self.cfg.lr_weights
        return Adam(lr=lr)

    def _set_stage(self, name):
        st = self.stages[name]
        self.state.template_stage = name
        self.sample = st.sample
        self.le, self.te = leading_trailing_indices(st.sample.surface)
        self.initial = decode_surface(self.state.model, st.sample.surface)
        vol = st.sample.volume
        if self.cfg.m4_batch < len(vol):
            pick = np.sort(self.rng.choice(len(vol), self.cfg.m4_batch, replace=False))
            self.m4_vol = vol[pick]
            self.m4_fixed = np.flatnonzero(np.isin(pick, st.sample.fixed_index))
        else:
            self.m4_vol, self.m4_fixed = vol, st.sample.fixed_index
        if len(self.m4_fixed) == 0:
            self.m4_fixed = np.array([int(np.argmax(np.hypot(*(self.m4_vol - 0.5).T)))])

    def _evaluate(self, surface):
        st = self.stages[self.state.template_stage]
        mesh = None
        if getattr(self.evaluator, "needs_mesh", False) and st.mesh is not None:
            mesh = decode_mesh(self.state.model, st.mesh)
        res = self.evaluator(surface, mesh)
        return res.objective, res.vertex_gradient(surface)

    def _external(self, surface, step):
        """Objective and vertex gradient, honouring reuse and clipping policies."""
        fresh = not self.external or self.cached is None or self.state.grad_reuse_age >= self.cfg.reuse_interval - 1
        if not fresh:
            self.state.grad_reuse_age += 1
            return self.cached[0], self.cached[1], False, False
        obj, g = self._evaluate(surface)
        self.state.grad_reuse_age = 0
        norm = float(np.linalg.norm(g))
        discarded = False
        if self.norms and norm > self.cfg.clip_factor * float(np.median(self.norms)):
            log.warning("step %d: gradient norm %.3e discarded (median %.3e)", step, norm, np.median(self.norms))
            self.state.discarded.append(step)
            g = np.zeros_like(g)
            discarded = True
        else:
            self.norms.append(norm)
        self.refresh_objectives.append(obj)
        self.cached = (obj, g)
        return obj, g, True, discarded

    def _m4(self):
        batch = Batch(self.sample.surface, self.m4_vol, self.m4_fixed, None, self.state.model.latent())
        w = self.weights[M4]
        loss, grads, zg = loss_grad_weights(self.state.model.net, batch, LossWeights(w_reg=w, w_z=0.0), terms=("l_dist", "l_def"))
        return loss.dist + loss.def_, grads, zg

    def step(self):
        st, cfg = self.state, self.cfg
        model = st.model
        net, z = model.net, model.latent()
        tr = net.trace(z, self.sample.surface, order=0)
        disp = tr.out[0]
        surface = self.sample.surface + disp
        try:
            cd, g_ext, fresh, discarded = self._external(surface, st.step)
        except (EvaluatorFailure, EvaluationError) as exc:
            if self.retrying:
                raise EvaluatorFailure(f"step {st.step}: evaluator failed again after reparameterization: {exc}") from exc
            log.warning("step %d: evaluator failed (%s); reparameterizing", st.step, exc)
            self.reparameterize(surface)
            self.retrying = True
            try:
                return self.step()
            finally:
                self.retrying = False
        obj, g_surf = _square_objective(cd, g_ext)

        row = {"step": st.step, "objective": cd, "fresh": fresh, "discarded": discarded, "stage": st.template_stage}
        total = obj
        for kind, w in self.weights.items():
            if kind == T1:
                v, g = constraint_T1(surface, self.initial)
            elif kind == E1:
                v, g = constraint_E1(disp)
            elif kind in (M2, M3):
                (m2, g2), (m3, g3) = constraint_M2_M3(surface, self.le, self.te)
                v, g = (m2, g2) if kind == M2 else (m3, g3)
            else:
                continue
            row[kind] = v
            total += w * v
            g_surf = g_surf + w * g

        grads, z_grad = net.backward(tr, g_surf[None])
        if M1 in self.weights:
            v, g = constraint_M1(z)
            row[M1] = v
            total += self.weights[M1] * v
            z_grad = z_grad + self.weights[M1] * g
        if M4 in self.weights:
            v, g4, zg4 = self._m4()
            row[M4] = v
            total += self.weights[M4] * v
            grads = [a + b for a, b in zip(grads, g4)]
            if z_grad is not None:
                z_grad = z_grad + zg4
        row["total"] = total
        row["reparam_count"] = st.reparam_count
        st.objective_log.append(row)

        update = [z_grad] if model.kind == "lsm" else grads
        st.model = model.with_design(self.opt.step(model.design(), update))
        st.step += 1

        if st.step in cfg.force_reparam_at or self._m4_spike(row):
            self.reparameterize(self.sample.surface + st.model.net.forward(st.model.latent(), self.sample.surface))
        if fresh:
            self._maybe_switch_stage()
        return row

    def _m4_spike(self, row):
        if M4 not in row:
            return False
        hist = self.m4_hist[-self.cfg.reparam_window:]
        self.m4_hist.append(row[M4])
        return len(hist) >= self.cfg.reparam_window and row[M4] > self.cfg.reparam_factor * float(np.median(hist))

    def _maybe_switch_stage(self):
        if self.state.template_stage != "coarse" or self.stages["fine"] is None:
            return
        hist = self.refresh_objectives
        p = self.cfg.stage_patience
        if len(hist) <= p:
            return
        old, new = hist[-p - 1], hist[-1]
        if old - new < self.cfg.stage_rel_tol * abs(old):
            log.info("step %d: switching to the fine template", self.state.step)
            init_model = self.initial_model
            self._set_stage("fine")
            self.initial = decode_surface(init_model, self.sample.surface)
            self.cached = None
            self.refresh_objectives = []

    def reparameterize(self, surface):
        st, cfg = self.state, self.cfg
        st.model = reparameterize(st.model, surface, self.sample, cfg.reparam_chamfer, lr=cfg.reparam_lr, reg_scale=cfg.reparam_reg_scale)
        after = decode_surface(st.model, self.sample.surface)
        st.reparam_events.append({"step": st.step, "chamfer": chamfer_distance(after, surface), "before": surface, "after": after})
        st.reparam_count += 1
        self.opt = self._new_optimizer()
        self.cached = None
        self.m4_hist = []


def reparameterize(model, surface, template, bound=1e-5, dmm_config=None, lr=1e-5, reg_scale=1.0, max_iters=None):
    """Refit the model to points sampled from its own current surface.

    The latent model re-infers z starting from the current one; the direct
    model starts again from a fresh network.  Raises when the refreshed
    surface drifts from the old one by more than ``bound`` (chamfer).
    """
    surface = np.asarray(surface, dtype=np.float64)
    if model.kind == "lsm":
        w = model.ckpt.config.weights(template)
        w = LossWeights(w.w_reg * reg_scale, w.w_z * reg_scale)
        z = infer_latent(model.ckpt, surface, template, max_iters=max_iters, z0=model.z, lr=lr, weights=w)
        new = replace(model, z=z)
    else:
        cfg = dmm_config or model.config
        seed = int(np.random.default_rng(np.uint64(cfg.seed)).integers(1 << 31))
        fitted = fit_dmm(surface, template, replace(cfg, seed=seed))
        new = replace(model, net=fitted.net)
    after = decode_surface(new, template.surface)
    cd = chamfer_distance(after, surface)
    if cd > bound:
        raise ReparameterizationError(f"reparameterized surface drifted by chamfer {cd:.3e} > {bound:.1e}")
    log.info("reparameterized (%s): chamfer %.3e", model.kind, cd)
    return new


def optimize(model, evaluator, template, mesh=None, constraints=None, config=None, fine=None, callback=None):
    """Adam on z (latent model) or the weights (direct model) against ||C_d||^2 + constraints.

    ``template`` is the coarse-stage TemplateSample and ``mesh`` its mesh;
    ``fine`` is an optional ``Stage`` switched to once the objective stalls.
    """
    cfg = config or OptimConfig()
    drv = _Driver(model, evaluator, Stage(template, mesh), fine, constraints, cfg)
    drv.initial_model = model.copy()
    for _ in range(cfg.steps):
        row = drv.step()
        if callback is not None:
            callback(drv.state, row)
    return drv.state


def final_mesh_quality(state, mesh):
    return mesh_quality(decode_mesh(state.model, mesh))
