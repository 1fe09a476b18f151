import numpy as np
import pytest

from meshparam.chamfer import chamfer_distance
from meshparam.errors import ContractError, SamplingError
from meshparam.geometry import is_simple, naca_corpus, naca_generate
from meshparam.losses import LossWeights
from meshparam.lsm import (
    LsmCheckpoint,
    LsmConfig,
    decode_mesh,
    decode_surface,
    infer_latent,
    sample_novel,
    train_lsm,
)
from meshparam.mesh import mesh_quality

TINY = dict(latent_dim=8, hidden_width=32, hidden_layers=2, epochs=6, reg_batch=64, seed=4)


@pytest.fixture(scope="module")
def tiny(small_template):
    mesh, tmpl = small_template
    corpus = naca_corpus(6, n_points=64, seed=2)
    return mesh, tmpl, corpus, train_lsm(corpus, tmpl, LsmConfig(**TINY))


def test_training_is_deterministic(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    again = train_lsm(corpus, tmpl, LsmConfig(**TINY))
    assert all(np.array_equal(a, b) for a, b in zip(ckpt.net.params, again.net.params))
    assert np.array_equal(ckpt.latents.vectors, again.latents.vectors)
    assert ckpt.latents.names == [c.name for c in corpus]
    assert len(ckpt.history) == TINY["epochs"]


def test_training_reduces_loss(tiny):
    ckpt = tiny[3]
    assert ckpt.history[-1].chamfer < ckpt.history[0].chamfer


def test_needs_two_shapes(small_template):
    with pytest.raises(ContractError):
        train_lsm([naca_generate("0012", 64)], small_template[1], LsmConfig(**TINY))


def test_checkpoint_round_trip(tiny, tmp_path):
    ckpt = tiny[3]
    path = tmp_path / "lsm.npz"
    ckpt.save(path)
    back = LsmCheckpoint.load(path)
    assert np.array_equal(back.latents.vectors, ckpt.latents.vectors)
    assert back.config == ckpt.config
    assert back.history == ckpt.history
    pts = tiny[1].surface
    z = ckpt.latents.vectors[1]
    assert np.array_equal(decode_surface(back, z, pts), decode_surface(ckpt, z, pts))
    path2 = tmp_path / "lsm2.npz"
    back.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_infer_zero_iterations_returns_initial(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    z = infer_latent(ckpt, corpus[0], tmpl, max_iters=0)
    assert np.array_equal(z, ckpt.latents.vectors.mean(axis=0))
    z0 = np.full(8, 0.01)
    assert np.array_equal(infer_latent(ckpt, corpus[0], tmpl, max_iters=0, z0=z0), z0)


def test_inference_improves_and_is_deterministic(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    target = naca_generate("3310", 64)
    z0 = ckpt.latents.vectors.mean(axis=0)
    z = infer_latent(ckpt, target, tmpl, max_iters=200)
    z2 = infer_latent(ckpt, target, tmpl, max_iters=200)
    assert np.array_equal(z, z2)
    before = chamfer_distance(decode_surface(ckpt, z0, tmpl.surface), target.points)
    after = chamfer_distance(decode_surface(ckpt, z, tmpl.surface), target.points)
    assert after <= before


def test_latent_penalty_shrinks_inferred_norm(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    target = corpus[2]
    w = ckpt.config.weights(tmpl)

    z_free = infer_latent(ckpt, target, tmpl, max_iters=150, weights=LossWeights(w.w_reg, 0.0))
    z_pen = infer_latent(ckpt, target, tmpl, max_iters=150, weights=LossWeights(w.w_reg, 10.0))
    assert np.linalg.norm(z_pen) < np.linalg.norm(z_free)


def test_decode_mesh_keeps_topology(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    out = decode_mesh(ckpt, ckpt.latents.vectors[0], mesh)
    assert out.topology_id == mesh.topology_id
    assert out.vertices.shape == mesh.vertices.shape
    assert mesh_quality(out).inverted_count == 0


def test_sample_scale_zero_returns_base(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    z = sample_novel(ckpt, tmpl, 3, 0.0, seed=1)
    assert np.array_equal(z, ckpt.latents.vectors[3])


def test_sample_distance_grows_with_scale(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    base = ckpt.latents.vectors[0]
    dists = []
    for scale in (0.1, 0.5, 1.0):
        z = sample_novel(ckpt, tmpl, base, scale, seed=9)
        assert is_simple(decode_surface(ckpt, z, tmpl.surface))
        dists.append(np.linalg.norm(z - base))
    # same seed, so the direction is shared and distance scales linearly
    assert dists[0] < dists[1] < dists[2]
    assert dists[2] == pytest.approx(10 * dists[0])
    assert np.array_equal(sample_novel(ckpt, tmpl, base, 0.5, seed=9), sample_novel(ckpt, tmpl, base, 0.5, seed=9))


def test_sampling_gives_up_on_self_intersection(tiny):
    mesh, tmpl, corpus, ckpt = tiny
    # a final layer this large scrambles every decoded surface
    net = ckpt.net.copy()
    net.params[-2] = np.random.default_rng(0).normal(0, 5.0, net.params[-2].shape)
    wild = LsmCheckpoint(net, ckpt.latents, ckpt.config)
    assert not is_simple(decode_surface(wild, ckpt.latents.vectors[0], tmpl.surface))
    with pytest.raises(SamplingError):
        sample_novel(wild, tmpl, 0, 1.0, seed=0, max_tries=3)


def test_config_round_trip():
    cfg = LsmConfig(**TINY)
    assert LsmConfig.from_dict(cfg.to_dict()) == cfg
