"""Direct Mapping Model: one network fitted per target shape."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import TrainingDivergedError
from .geometry import AirfoilCurve
from .losses import Batch, LossBreakdown, LossWeights, loss_grad_weights
from .net import ActivationBlend, DeformationNet
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class DmmConfig:
    hidden_width: int = 256
    hidden_layers: int = 2
    lr: float = 1e-4
    lr_final: float | None = None
    iters: int = 600
    reg_batch: int = 512
    w_reg: float | None = None
    w_reg_scale: float = 1e-6
    seed: int = 0
    activation: ActivationBlend = ActivationBlend()

    def weights(self, template):
        w_reg = self.w_reg
        if w_reg is None:
            w_reg = self.w_reg_scale * len(template.surface) / min(self.reg_batch, len(template.volume))
        return LossWeights(w_reg=w_reg, w_z=0.0)

    def new_net(self, seed=None):
        sizes = [2] + [self.hidden_width] * self.hidden_layers + [2]
        return DeformationNet(sizes, 0, self.activation, seed=self.seed if seed is None else seed)


@dataclass
class DmmResult:
    net: DeformationNet
    loss: LossBreakdown
    history: list


def _target_points(target):
    return target.points if isinstance(target, AirfoilCurve) else np.asarray(target, dtype=np.float64)


def fit_dmm(target, template, config=None, iters=None, net=None, callback=None):
    """Fit a fresh (or given) network so the deformed template surface matches ``target``."""
    cfg = config or DmmConfig()
    iters = cfg.iters if iters is None else iters
    net = cfg.new_net() if net is None else net.copy()
    weights = cfg.weights(template)
    target_pts = _target_points(target)
    rng = np.random.default_rng(np.uint64(cfg.seed) + np.uint64(1))
    opt = Adam(lr=cfg.lr)
    history = []
    for it in range(iters):
        batch = _reg_batch(template, target_pts, cfg.reg_batch, rng)
        loss, grads, _ = loss_grad_weights(net, batch, weights)
        if not np.isfinite(loss.total):
            raise TrainingDivergedError("non-finite DMM loss", {"iter": it, **loss.__dict__})
        history.append(loss)
        if callback is not None:
            callback(it, loss)
        net.params = opt.step(net.params, grads, lr=_lr_at(cfg, it, iters))
    final = evaluate(net, template, target_pts, weights)
    log.debug("fit_dmm finished: %s", final)
    return DmmResult(net, final, history)


def _lr_at(cfg, it, iters):
    if cfg.lr_final is None or iters <= 1:
        return cfg.lr
    return cfg.lr * (cfg.lr_final / cfg.lr) ** (it / (iters - 1))


def _reg_batch(template, target_pts, reg_batch, rng, z=None):
    m = len(template.volume)
    if reg_batch >= m:
        vol, fixed = template.volume, template.fixed_index
    else:
        pick = np.sort(rng.choice(m, size=reg_batch, replace=False))
        vol = template.volume[pick]
        fixed = np.flatnonzero(np.isin(pick, template.fixed_index))
    return Batch(template.surface, vol, fixed, target_pts, z)


def evaluate(net, template, target, weights, z=None):
    """Full-sample loss (no subsampling) of a network against a target."""
    batch = Batch(template.surface, template.volume, template.fixed_index, _target_points(target), z)
    loss, _, _ = loss_grad_weights(net, batch, weights)
    return loss


def decode_mesh(net, mesh):
    """Move every vertex by the network displacement; connectivity is untouched."""
    return mesh.with_vertices(mesh.vertices + net.forward(None, mesh.vertices))
