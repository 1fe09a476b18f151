"""Coordinate MLP with exact input-derivative propagation.

Every activation array carries five lanes, stacked along axis 0::

    0: value   1: d/dx   2: d/dy   3: d2/dx2   4: d2/dy2

(second-order dual numbers in the two input coordinates).  A value-only
trace uses lane 0 alone.  ``DeformationNet.backward`` runs the reverse
sweep over the recorded lanes, so losses built from the second
derivatives get exact weight gradients (third-order mixed terms
included).
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ContractError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ActivationBlend:
    """phi(u) = relu_weight * relu(u) + sine_weight * sin(sine_frequency * u)."""

    relu_weight: float = 0.5
    sine_weight: float = 0.5
    sine_frequency: float = 30.0

    def __post_init__(self):
        if self.relu_weight == 0.0 and self.sine_weight == 0.0:
            raise ValueError("at least one activation weight must be nonzero")
        if not self.sine_frequency > 0.0:
            raise ValueError("sine_frequency must be positive")

    def derivatives(self, u, order):
        """phi and its first ``order + 1`` derivatives (relu'' = 0, relu'(0) = 0)."""
        a, b, w = self.relu_weight, self.sine_weight, self.sine_frequency
        s = np.sin(w * u)
        f = b * s
        if a:
            f = f + a * np.maximum(u, 0.0)
        if order == 0:
            c = np.cos(w * u)
            f1 = b * w * c
            if a:
                f1 = f1 + a * (u > 0.0)
            return f, f1, None, None
        c = np.cos(w * u)
        f1 = b * w * c
        if a:
            f1 = f1 + a * (u > 0.0)
        f2 = -b * w * w * s
        f3 = -b * w**3 * c
        return f, f1, f2, f3


@dataclass
class GradBundle:
    """Displacements with their input Jacobian and pure second partials.

    ``jac[i, c, k]`` = d(dv_c)/d(p_k); ``hess_diag[i, c, k]`` = d2(dv_c)/d(p_k)^2.
    """

    value: np.ndarray
    jac: np.ndarray
    hess_diag: np.ndarray


@dataclass
class Trace:
    order: int
    z: np.ndarray | None
    points: np.ndarray
    inputs: list = field(default_factory=list)  # lanes fed into layer l (l >= 1)
    pre: list = field(default_factory=list)  # pre-activation lanes of hidden layers
    dphi: list = field(default_factory=list)  # (f1, f2, f3) per hidden layer
    out: np.ndarray | None = None  # (L, N, 2)

    def bundle(self):
        if self.order == 0:
            raise ValueError("trace was recorded without input derivatives")
        y = self.out
        jac = np.stack([y[1], y[2]], axis=2)
        hess = np.stack([y[3], y[4]], axis=2)
        return GradBundle(y[0], jac, hess)


class DeformationNet:
    """delta_v = f(z ++ p) with ``layer_sizes = [latent_dim + 2, hidden..., 2]``."""

    def __init__(self, layer_sizes, latent_dim=0, activation=None, params=None, seed=None):
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.latent_dim = int(latent_dim)
        self.activation = activation or ActivationBlend()
        self.seed = seed
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if self.layer_sizes[-1] != 2:
            raise ValueError("output width must be 2")
        if self.layer_sizes[0] != self.latent_dim + 2:
            raise ValueError(f"input width must be latent_dim + 2 = {self.latent_dim + 2}")
        if params is None:
            params = self._init_params(np.random.default_rng(np.uint64(seed or 0)))
        self.params = [np.array(p, dtype=np.float64) for p in params]
        expected = self.param_shapes()
        if [p.shape for p in self.params] != expected:
            raise ValueError(f"parameter shapes {[p.shape for p in self.params]} != {expected}")

    # ------------------------------------------------------------ set-up

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    def param_shapes(self):
        shapes = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    def _init_params(self, rng):
        omega = self.activation.sine_frequency
        params = []
        for l, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            if l == self.n_layers - 1:
                params += [np.zeros((fan_in, fan_out)), np.zeros(fan_out)]
                continue
            if l == 0:
                # coordinate and latent blocks each scaled by their own fan-in
                w = np.empty((fan_in, fan_out))
                d = self.latent_dim
                if d:
                    w[:d] = rng.uniform(-1.0 / d, 1.0 / d, (d, fan_out))
                w[d:] = rng.uniform(-0.5, 0.5, (2, fan_out))
                bound_b = 1.0 / np.sqrt(2.0)
            else:
                bound = np.sqrt(6.0 / fan_in) / omega
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
                bound_b = 1.0 / np.sqrt(fan_in)
            params += [w, rng.uniform(-bound_b, bound_b, fan_out)]
        return params

    def copy(self):
        return DeformationNet(self.layer_sizes, self.latent_dim, self.activation, [p.copy() for p in self.params], self.seed)

    def _check(self, z, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[None, :]
        if points.ndim != 2 or points.shape[1] != 2:
            raise ContractError(f"points must have shape (n, 2), got {points.shape}")
        if self.latent_dim:
            if z is None:
                raise ContractError("this network needs a latent vector")
            z = np.asarray(z, dtype=np.float64).ravel()
            if z.shape != (self.latent_dim,):
                raise ContractError(f"latent vector must have length {self.latent_dim}, got {z.shape[0]}")
        elif z is not None and np.size(z):
            raise ContractError("this network takes no latent vector")
        else:
            z = None
        return z, points

    # ----------------------------------------------------------- forward

    def trace(self, z, points, order=2):
        """Forward pass recording everything ``backward`` needs."""
        if order not in (0, 2):
            raise ValueError("order must be 0 or 2")
        z, points = self._check(z, points)
        act = self.activation
        n = len(points)
        d = self.latent_dim
        tr = Trace(order, z, points)

        w0, b0 = self.params[0], self.params[1]
        bias = b0 + (z @ w0[:d] if d else 0.0)
        a0 = points @ w0[d:] + bias
        if order == 0:
            a = a0[None]
        else:
            a = np.zeros((5, n, w0.shape[1]))
            a[0] = a0
            a[1] = w0[d]
            a[2] = w0[d + 1]

        for l in range(1, self.n_layers):
            h = self._activate(a, act, tr)
            w, b = self.params[2 * l], self.params[2 * l + 1]
            tr.inputs.append(h)
            a = h @ w
            a[0] += b
        tr.out = a
        return tr

    def _activate(self, a, act, tr):
        f, f1, f2, f3 = act.derivatives(a[0], 0 if tr.order == 0 else 2)
        tr.pre.append(a)
        tr.dphi.append((f1, f2, f3))
        if tr.order == 0:
            return f[None]
        h = np.empty_like(a)
        h[0] = f
        h[1] = f1 * a[1]
        h[2] = f1 * a[2]
        h[3] = f2 * a[1] ** 2 + f1 * a[3]
        h[4] = f2 * a[2] ** 2 + f1 * a[4]
        return h

    def forward(self, z, points):
        return self.trace(z, points, order=0).out[0]

    def forward_with_input_derivs(self, z, points):
        return self.trace(z, points, order=2).bundle()

    # ---------------------------------------------------------- backward

    def backward(self, tr, seeds):
        """Reverse sweep.

        ``seeds`` has the shape of ``tr.out``: d(loss)/d(lane) for every
        output lane.  Returns ``(param_grads, z_grad)``; ``z_grad`` is
        None for networks without a latent input.
        """
        g = np.asarray(seeds, dtype=np.float64)
        if g.shape != tr.out.shape:
            raise ContractError(f"seed shape {g.shape} != output shape {tr.out.shape}")
        grads = [None] * len(self.params)
        for l in range(self.n_layers - 1, 0, -1):
            w = self.params[2 * l]
            h = tr.inputs[l - 1]
            lanes, n, fan_in = h.shape
            grads[2 * l] = h.reshape(lanes * n, fan_in).T @ g.reshape(lanes * n, -1)
            grads[2 * l + 1] = g[0].sum(axis=0)
            gh = g @ w.T
            g = self._activate_backward(gh, tr.pre[l - 1], tr.dphi[l - 1], tr.order)

        d = self.latent_dim
        w0 = self.params[0]
        g0 = g[0]
        col = g0.sum(axis=0)
        gw0 = np.empty_like(w0)
        gw0[d:] = tr.points.T @ g0
        if tr.order == 2:
            gw0[d] += g[1].sum(axis=0)
            gw0[d + 1] += g[2].sum(axis=0)
        z_grad = None
        if d:
            gw0[:d] = np.outer(tr.z, col)
            z_grad = w0[:d] @ col
        grads[0] = gw0
        grads[1] = col
        return grads, z_grad

    @staticmethod
    def _activate_backward(gh, a, dphi, order):
        f1, f2, f3 = dphi
        if order == 0:
            return (gh[0] * f1)[None]
        ga = np.empty_like(gh)
        ga[0] = (
            gh[0] * f1
            + (gh[1] * a[1] + gh[2] * a[2] + gh[3] * a[3] + gh[4] * a[4]) * f2
            + (gh[3] * a[1] ** 2 + gh[4] * a[2] ** 2) * f3
        )
        ga[1] = gh[1] * f1 + 2.0 * gh[3] * f2 * a[1]
        ga[2] = gh[2] * f1 + 2.0 * gh[4] * f2 * a[2]
        ga[3] = gh[3] * f1
        ga[4] = gh[4] * f1
        return ga

    # ------------------------------------------------------------ file IO

    def config(self):
        return {
            "layer_sizes": self.layer_sizes,
            "latent_dim": self.latent_dim,
            "activation": asdict(self.activation),
            "seed": self.seed,
        }

    def arrays(self, prefix="net"):
        return {f"{prefix}/param{i}": p for i, p in enumerate(self.params)}

    @classmethod
    def from_arrays(cls, meta, arrays, prefix="net"):
        params = [arrays[f"{prefix}/param{i}"] for i in range(2 * (len(meta["layer_sizes"]) - 1))]
        return cls(meta["layer_sizes"], meta["latent_dim"], ActivationBlend(**meta["activation"]), params, meta.get("seed"))

    def save(self, path, extra_meta=None, extra_arrays=None):
        save_checkpoint(path, {"net": self.config(), **(extra_meta or {})}, {**self.arrays(), **(extra_arrays or {})})

    @classmethod
    def load(cls, path):
        meta, arrays = load_checkpoint(path)
        return cls.from_arrays(meta["net"], arrays)


def save_checkpoint(path, meta, arrays):
    """``.npz`` container: a JSON ``meta`` entry plus named float64 arrays."""
    payload = {"format_version": np.array(CHECKPOINT_VERSION), "meta": np.array(json.dumps(meta, sort_keys=True))}
    payload.update({k: np.asarray(v) for k, v in arrays.items()})
    # fixed member timestamps so identical content gives identical bytes
    with zipfile.ZipFile(Path(path), "w", zipfile.ZIP_STORED) as zf:
        for name, arr in payload.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        meta = json.loads(str(data["meta"]))
        arrays = {k: data[k] for k in data.files if k not in ("format_version", "meta")}
    return meta, arrays
