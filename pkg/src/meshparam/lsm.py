"""Latent Space Model: auto-decoder over an airfoil corpus."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .chamfer import chamfer_distance
from .errors import ContractError, SamplingError, TrainingDivergedError
from .geometry import AirfoilCurve, is_simple
from .losses import Batch, LossBreakdown, LossWeights, loss_grad_weights
from .net import ActivationBlend, DeformationNet, load_checkpoint, save_checkpoint
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class LsmConfig:
    latent_dim: int = 256
    hidden_width: int = 256
    hidden_layers: int = 3
    epochs: int = 20
    lr: float = 1e-4
    latent_lr: float = 1e-3
    latent_init_std: float = 0.01
    reg_batch: int = 512
    w_reg_scale: float = 1e-6
    w_z: float = 1e-4
    seed: int = 0
    activation: ActivationBlend = field(default_factory=ActivationBlend)
    # inference
    infer_lr: float = 1e-3
    infer_max_iters: int = 1000
    infer_patience: int = 50
    infer_rel_tol: float = 1e-7
    divergence_limit: float = 1e3

    def weights(self, template):
        m = min(self.reg_batch, len(template.volume))
        return LossWeights(w_reg=self.w_reg_scale * len(template.surface) / m, w_z=self.w_z)

    def new_net(self):
        sizes = [self.latent_dim + 2] + [self.hidden_width] * self.hidden_layers + [2]
        return DeformationNet(sizes, self.latent_dim, self.activation, seed=self.seed)

    def to_dict(self):
        d = asdict(self)
        d["activation"] = asdict(self.activation)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("activation"), dict):
            d["activation"] = ActivationBlend(**d["activation"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class LatentTable:
    vectors: np.ndarray
    names: list

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if len(self.vectors) != len(self.names):
            raise ValueError("one name per latent row")


@dataclass
class LsmCheckpoint:
    net: DeformationNet
    latents: LatentTable
    config: LsmConfig
    history: list = field(default_factory=list)  # per-epoch mean LossBreakdown

    def __post_init__(self):
        if self.latents.vectors.shape[1] != self.net.latent_dim:
            raise ValueError("latent table width does not match the network")

    def save(self, path):
        meta = {
            "net": self.net.config(),
            "lsm": self.config.to_dict(),
            "names": list(self.latents.names),
            "history": [b.as_row() for b in self.history],
        }
        save_checkpoint(path, meta, {**self.net.arrays(), "latents": self.latents.vectors})

    @classmethod
    def load(cls, path):
        meta, arrays = load_checkpoint(path)
        net = DeformationNet.from_arrays(meta["net"], arrays)
        table = LatentTable(arrays["latents"], meta["names"])
        history = [LossBreakdown(*row) for row in meta.get("history", [])]
        return cls(net, table, LsmConfig.from_dict(meta["lsm"]), history)


def _points(target):
    return target.points if isinstance(target, AirfoilCurve) else np.asarray(target, dtype=np.float64)


def _reg_subset(template, reg_batch, rng):
    m = len(template.volume)
    if reg_batch >= m:
        return template.volume, template.fixed_index
    pick = np.sort(rng.choice(m, size=reg_batch, replace=False))
    return template.volume[pick], np.flatnonzero(np.isin(pick, template.fixed_index))


def train_lsm(corpus, template, config=None, callback=None):
    """Jointly optimize the network and one latent vector per corpus airfoil."""
    cfg = config or LsmConfig()
    corpus = list(corpus)
    if len(corpus) < 2:
        raise ContractError("LSM training needs at least two airfoils")
    rng = np.random.default_rng(np.uint64(cfg.seed))
    net = cfg.new_net()
    targets = [_points(c) for c in corpus]
    names = [getattr(c, "name", f"shape{i}") for i, c in enumerate(corpus)]
    latents = rng.normal(0.0, cfg.latent_init_std, (len(corpus), cfg.latent_dim))
    weights = cfg.weights(template)
    net_opt = Adam(lr=cfg.lr)
    z_opts = [Adam(lr=cfg.latent_lr) for _ in corpus]
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for t in rng.permutation(len(corpus)):
            vol, fixed = _reg_subset(template, cfg.reg_batch, rng)
            batch = Batch(template.surface, vol, fixed, targets[t], latents[t])
            loss, grads, z_grad = loss_grad_weights(net, batch, weights)
            if not np.isfinite(loss.total):
                raise TrainingDivergedError("non-finite LSM loss", {"epoch": epoch, "step": step, "shape": names[t], **asdict(loss)})
            net.params = net_opt.step(net.params, grads)
            latents[t] = z_opts[t].step([latents[t]], [z_grad])[0]
            epoch_losses.append(loss)
            step += 1
        mean = LossBreakdown.mean(epoch_losses)
        history.append(mean)
        log.info("epoch %d: %s", epoch, mean)
        if callback is not None:
            callback(epoch, mean)
    return LsmCheckpoint(net, LatentTable(latents, names), cfg, history)


def reconstruction_loss(ckpt, z, target, template):
    w = ckpt.config.weights(template)
    batch = Batch(template.surface, template.volume, template.fixed_index, _points(target), np.asarray(z, dtype=np.float64))
    loss, _, _ = loss_grad_weights(ckpt.net, batch, w)
    return loss


def infer_latent(ckpt, target, template, max_iters=None, z0=None, lr=None, seed=0, weights=None):
    """Optimize a latent vector for ``target`` with the network frozen.

    Starts from ``z0`` (default: the mean of the latent table) and stops
    early once the total loss improves by less than the relative
    tolerance over the patience window.  ``weights`` overrides the
    trained loss weights.
    """
    cfg = ckpt.config
    max_iters = cfg.infer_max_iters if max_iters is None else max_iters
    z = np.array(ckpt.latents.vectors.mean(axis=0) if z0 is None else z0, dtype=np.float64)
    if max_iters <= 0:
        return z
    weights = cfg.weights(template) if weights is None else weights
    target_pts = _points(target)
    rng = np.random.default_rng(np.uint64(seed))
    opt = Adam(lr=cfg.infer_lr if lr is None else lr)
    best = []
    for it in range(max_iters):
        vol, fixed = _reg_subset(template, cfg.reg_batch, rng)
        loss, _, z_grad = loss_grad_weights(ckpt.net, Batch(template.surface, vol, fixed, target_pts, z), weights)
        if not np.isfinite(loss.total) or loss.total > cfg.divergence_limit:
            raise TrainingDivergedError("latent inference diverged", {"iter": it, **asdict(loss)})
        best.append(loss.total if not best else min(best[-1], loss.total))
        if it >= cfg.infer_patience:
            old = best[it - cfg.infer_patience]
            if old - best[-1] < cfg.infer_rel_tol * abs(old):
                break
        z = opt.step([z], [z_grad])[0]
    return z


def decode_surface(ckpt, z, points):
    points = np.asarray(points, dtype=np.float64)
    return points + ckpt.net.forward(z, points)


def decode_mesh(ckpt, z, mesh):
    """Every vertex moved by the network displacement; topology and markers untouched."""
    return mesh.with_vertices(decode_surface(ckpt, z, mesh.vertices))


def sample_novel(ckpt, template, base, scale, seed=0, max_tries=10):
    """Perturb a latent along the principal directions of the latent table.

    ``base`` is a table row index or a latent vector.  The step is a
    seeded Gaussian mixture of the covariance eigenvectors weighted by
    the square roots of their eigenvalues; draws whose decoded surface
    self-intersects are rejected.
    """
    table = ckpt.latents.vectors
    z_base = table[int(base)] if np.ndim(base) == 0 else np.asarray(base, dtype=np.float64)
    if scale == 0:
        return z_base.copy()
    centred = table - table.mean(axis=0)
    # principal directions via SVD of the centred table
    _, sing, vt = np.linalg.svd(centred, full_matrices=False)
    std = sing / np.sqrt(max(len(table) - 1, 1))
    rng = np.random.default_rng(np.uint64(seed))
    for _ in range(max_tries):
        coeff = rng.standard_normal(len(std))
        z_new = z_base + scale * (coeff * std) @ vt
        surf = decode_surface(ckpt, z_new, template.surface)
        if is_simple(surf):
            return z_new
    raise SamplingError(f"no simple decoded surface after {max_tries} draws")


def surface_chamfer(ckpt, z, template, target):
    return chamfer_distance(decode_surface(ckpt, z, template.surface), _points(target))
