import json
import math

import numpy as np
import pytest

from meshparam.errors import ContractError
from meshparam.net import ActivationBlend, DeformationNet, load_checkpoint, save_checkpoint


def random_net(rng, widths=(6, 5), latent_dim=0, activation=None):
    net = DeformationNet([latent_dim + 2, *widths, 2], latent_dim, activation, seed=int(rng.integers(1 << 30)))
    net.params[-2] = rng.normal(0, 0.5, net.params[-2].shape)
    net.params[-1] = rng.normal(0, 0.1, 2)
    return net


def test_activation_derivatives_match_finite_differences():
    act = ActivationBlend(0.5, 0.5, 30.0)
    u = np.array([-0.3, -0.05, 0.02, 0.17, 0.4])
    f, f1, f2, f3 = act.derivatives(u, 2)
    h = 1e-6
    fp, f1p, f2p, _ = act.derivatives(u + h, 2)
    fm, f1m, f2m, _ = act.derivatives(u - h, 2)
    assert np.allclose((fp - fm) / (2 * h), f1, rtol=1e-6)
    assert np.allclose((f1p - f1m) / (2 * h), f2, rtol=1e-6)
    assert np.allclose((f2p - f2m) / (2 * h), f3, rtol=1e-6)


def test_relu_part_has_zero_slope_at_origin_kink():
    act = ActivationBlend(1.0, 0.0, 30.0)
    _, f1, f2, f3 = act.derivatives(np.array([0.0, 1.0, -1.0]), 2)
    assert f1.tolist() == [0.0, 1.0, 0.0]
    assert np.all(f2 == 0) and np.all(f3 == 0)


def test_single_unit_closed_form():
    # one hidden unit: dv = c * phi(w . p + b) + d
    a, bw, om = 0.5, 0.5, 30.0
    act = ActivationBlend(a, bw, om)
    w, b, c, d = np.array([0.7, -0.4]), 0.05, np.array([0.3, -1.2]), np.array([0.01, 0.02])
    net = DeformationNet([2, 1, 2], 0, act, params=[w[:, None], np.array([b]), c[None, :], d])
    p = np.array([[0.2, 0.1], [0.9, -0.3]])
    u = p @ w + b
    phi = a * np.maximum(u, 0) + bw * np.sin(om * u)
    d1 = a * (u > 0) + bw * om * np.cos(om * u)
    d2 = -bw * om**2 * np.sin(om * u)
    g = net.forward_with_input_derivs(None, p)
    assert np.allclose(g.value, phi[:, None] * c + d, atol=1e-14)
    for k in range(2):
        assert np.allclose(g.jac[:, :, k], d1[:, None] * c * w[k], atol=1e-13)
        assert np.allclose(g.hess_diag[:, :, k], d2[:, None] * c * w[k] ** 2, atol=1e-11)


def test_identity_at_initialization(rng):
    net = DeformationNet([10, 16, 16, 2], 8, seed=3)
    p = rng.uniform(-1, 1, (20, 2))
    g = net.forward_with_input_derivs(rng.normal(size=8), p)
    assert np.all(g.value == 0) and np.all(g.jac == 0) and np.all(g.hess_diag == 0)


def test_input_derivatives_match_finite_differences(rng):
    net = random_net(rng, latent_dim=3)
    z = rng.normal(0, 0.3, 3)
    p = rng.uniform(-0.5, 0.5, (6, 2))
    g = net.forward_with_input_derivs(z, p)
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fp, f0, fm = net.forward(z, p + e), net.forward(z, p), net.forward(z, p - e)
        assert np.allclose((fp - fm) / (2 * h), g.jac[:, :, k], rtol=1e-5, atol=1e-7)
        assert np.allclose((fp - 2 * f0 + fm) / h**2, g.hess_diag[:, :, k], rtol=1e-3, atol=1e-3)


def test_backward_matches_finite_differences_on_all_lanes(rng):
    net = random_net(rng, latent_dim=2)
    z = rng.normal(0, 0.3, 2)
    p = rng.uniform(-0.5, 0.5, (5, 2))
    tr = net.trace(z, p, order=2)
    seeds = rng.normal(size=tr.out.shape)
    grads, zg = net.backward(tr, seeds)

    def scalar(n, zz):
        return float(np.sum(seeds * n.trace(zz, p, order=2).out))

    h = 1e-6
    for li, param in enumerate(net.params):
        for idx in [tuple(rng.integers(0, s) for s in param.shape) for _ in range(4)]:
            plus, minus = net.copy(), net.copy()
            plus.params[li][idx] += h
            minus.params[li][idx] -= h
            fd = (scalar(plus, z) - scalar(minus, z)) / (2 * h)
            assert grads[li][idx] == pytest.approx(fd, rel=1e-4, abs=1e-6)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (scalar(net, z + e) - scalar(net, z - e)) / (2 * h)
        assert zg[j] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_contract_errors():
    dmm = DeformationNet([2, 4, 2])
    lsm = DeformationNet([5, 4, 2], 3)
    with pytest.raises(ContractError):
        dmm.forward(np.ones(2), np.zeros((1, 2)))
    with pytest.raises(ContractError):
        lsm.forward(None, np.zeros((1, 2)))
    with pytest.raises(ContractError):
        lsm.forward(np.ones(2), np.zeros((1, 2)))
    with pytest.raises(ContractError):
        dmm.forward(None, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        DeformationNet([4, 4, 2], 1)
    with pytest.raises(ValueError):
        DeformationNet([2, 4, 3])


def test_checkpoint_round_trip_and_determinism(tmp_path, rng):
    net = random_net(rng, latent_dim=2)
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    net.save(a)
    net.save(b)
    assert a.read_bytes() == b.read_bytes()
    back = DeformationNet.load(a)
    assert back.layer_sizes == net.layer_sizes and back.latent_dim == 2
    assert all(np.array_equal(x, y) for x, y in zip(back.params, net.params))
    assert back.activation == net.activation


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "c.npz"
    save_checkpoint(path, {"x": 1}, {"a": np.arange(3.0)})
    meta, arrays = load_checkpoint(path)
    assert meta == {"x": 1} and arrays["a"].tolist() == [0.0, 1.0, 2.0]
    np.savez(path, format_version=np.array(99), meta=np.array(json.dumps({"x": 1})))
    with pytest.raises(ContractError):
        load_checkpoint(path)


def test_seeded_init_is_reproducible():
    a = DeformationNet([4, 8, 8, 2], 2, seed=5)
    b = DeformationNet([4, 8, 8, 2], 2, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))
    bound = math.sqrt(6 / 8) / 30
    assert np.abs(a.params[2]).max() <= bound
