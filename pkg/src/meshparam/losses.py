"""Reconstruction and mesh-regularization objectives.

All sums run over sample points (not means), except the chamfer term
which is a mean by definition.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chamfer import chamfer_distance
from .errors import ContractError

REGISTERED_TERMS = ("chamfer", "l_dist", "l_def", "latent_norm")


@dataclass(frozen=True)
class LossWeights:
    w_reg: float = 1e-2 * 200 / 1024
    w_z: float = 1e-4

    def __post_init__(self):
        for name in ("w_reg", "w_z"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    chamfer: float
    dist: float
    def_: float
    latent_norm: float
    total: float

    @classmethod
    def compose(cls, chamfer, dist, def_, latent_norm, weights):
        total = chamfer + weights.w_reg * (dist + def_) + weights.w_z * latent_norm
        return cls(float(chamfer), float(dist), float(def_), float(latent_norm), float(total))

    def as_row(self):
        return [self.chamfer, self.dist, self.def_, self.latent_norm, self.total]

    @classmethod
    def mean(cls, items):
        arr = np.array([b.as_row() for b in items])
        return cls(*arr.mean(axis=0).tolist())


def _hess(x):
    """Accept a GradBundle or a raw (m, 2, 2) hess_diag array."""
    h = getattr(x, "hess_diag", x)
    return np.asarray(h, dtype=np.float64)


def l_dist(bundles):
    """Sum over points of the four squared pure second partials of the displacement."""
    h = _hess(bundles)
    if h.size == 0:
        raise ValueError("l_dist needs at least one volume sample")
    return float(np.sum(h * h))


def l_def(fixed_displacements):
    d = np.asarray(fixed_displacements, dtype=np.float64).reshape(-1, 2)
    if len(d) == 0:
        raise ValueError("l_def needs a non-empty fixed set")
    return float(np.sum(d * d))


def l_reg(bundles, fixed_displacements):
    return l_dist(bundles) + l_def(fixed_displacements)


def total_loss(surface_out, volume_bundles, fixed_displacements, target, z, weights):
    """Loss breakdown from already-decoded outputs (no gradients)."""
    cd = chamfer_distance(surface_out, target)
    dist = l_dist(volume_bundles)
    dfm = l_def(fixed_displacements)
    zn = 0.0 if z is None else float(np.dot(np.ravel(z), np.ravel(z)))
    return LossBreakdown.compose(cd, dist, dfm, zn, weights)


@dataclass
class Batch:
    """One reconstruction problem: template samples against a target point set."""

    surface: np.ndarray
    volume: np.ndarray
    fixed_index: np.ndarray
    target: np.ndarray
    z: np.ndarray | None = None


def loss_grad_weights(net, batch, weights, terms=REGISTERED_TERMS):
    """Loss breakdown plus exact gradients w.r.t. net parameters and ``z``.

    Returns ``(breakdown, param_grads, z_grad)``.
    """
    unknown = [t for t in terms if t not in REGISTERED_TERMS]
    if unknown:
        raise ContractError(f"unregistered loss terms: {unknown}")
    grads = [np.zeros_like(p) for p in net.params]
    z_grad = None if batch.z is None else np.zeros(net.latent_dim)

    def accumulate(g, zg, scale=1.0):
        nonlocal z_grad
        for acc, gi in zip(grads, g):
            acc += scale * gi
        if zg is not None:
            z_grad += scale * zg

    cd = 0.0
    if "chamfer" in terms:
        tr = net.trace(batch.z, batch.surface, order=0)
        cd, g_out = chamfer_distance(batch.surface + tr.out[0], batch.target, return_grad=True)
        accumulate(*net.backward(tr, g_out[None]))

    dist = dfm = 0.0
    if "l_dist" in terms or "l_def" in terms:
        tr = net.trace(batch.z, batch.volume, order=2)
        seeds = np.zeros_like(tr.out)
        if "l_dist" in terms:
            h = tr.out[3:5]
            dist = float(np.sum(h * h))
            seeds[3:5] = 2.0 * weights.w_reg * h
        if "l_def" in terms:
            fixed = tr.out[0][batch.fixed_index]
            dfm = float(np.sum(fixed * fixed))
            np.add.at(seeds[0], batch.fixed_index, 2.0 * weights.w_reg * fixed)
        accumulate(*net.backward(tr, seeds))

    zn = 0.0
    if "latent_norm" in terms and batch.z is not None:
        zn = float(np.dot(batch.z, batch.z))
        z_grad += 2.0 * weights.w_z * batch.z

    return LossBreakdown.compose(cd, dist, dfm, zn, weights), grads, z_grad


def append_loss_csv(path, step, breakdown):
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["step", "chamfer", "dist", "def", "latent_norm", "total"])
        w.writerow([step, *(repr(v) for v in breakdown.as_row())])
