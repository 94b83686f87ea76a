import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clusterdiar.clustergan import (
    CE_CLAMPS,
    ClusterGanConfig,
    ClusterGanModel,
    ConfigError,
    DegenerateVectorError,
    TrainingDiverged,
    cluster_ce_from_logits,
    cluster_ce_loss,
    cosine_recovery_loss,
    encode,
    gradient_penalty,
    initial_model,
    sample_latent,
    sample_latent_batch,
    train,
    wgan_critic_loss,
)
from clusterdiar.numeric import Layer, MlpModel, init_mlp, softmax

import gradcheck


def tiny_config(**kw):
    base = dict(d_c=3, d_n=4, embedding_dim=8, hidden=16, batch_size=8, iterations=5)
    base.update(kw)
    return ClusterGanConfig(**base)


def tiny_data(rng, n=60, d_c=3, dim=8):
    labels = np.arange(n) % d_c
    centres = rng.normal(scale=3.0, size=(d_c, dim))
    return (centres[labels] + rng.normal(scale=0.3, size=(n, dim))).astype(np.float32), labels


# ----------------------------------------------------------------- sampler


def test_latent_sampler_moments():
    cfg = ClusterGanConfig(d_c=4)
    n = 100_000
    z_n, z_c, idx = sample_latent_batch(cfg, np.random.default_rng(0), n, dtype=np.float64)
    assert z_n.shape == (n, 30)
    # CLT bound on the mean, 5% band on the variance
    assert np.all(np.abs(z_n.mean(axis=0)) <= 3 * 0.1 / math.sqrt(n))
    np.testing.assert_allclose(z_n.var(axis=0), 0.01, rtol=0.05)
    assert np.all(z_c.sum(axis=1) == 1)
    np.testing.assert_array_equal(z_c.argmax(axis=1), idx)


def test_latent_fixed_speaker_is_one_hot():
    code = sample_latent(ClusterGanConfig(d_c=4), np.random.default_rng(0), speaker_index=2)
    np.testing.assert_array_equal(code.z_c, [0, 0, 1, 0])
    assert code.vector.shape == (34,)


def test_latent_follows_empirical_label_distribution():
    cfg = ClusterGanConfig(d_c=3)
    probs = np.array([0.7, 0.2, 0.1])
    _, _, idx = sample_latent_batch(cfg, np.random.default_rng(1), 20_000, probs)
    np.testing.assert_allclose(np.bincount(idx) / 20_000, probs, atol=0.01)


def test_latent_bad_index():
    with pytest.raises(ValueError):
        sample_latent(ClusterGanConfig(d_c=4), np.random.default_rng(0), speaker_index=4)


def test_config_validation():
    with pytest.raises(ConfigError):
        ClusterGanConfig(d_c=1)
    with pytest.raises(ConfigError):
        ClusterGanConfig(d_c=2, sigma=0)
    with pytest.raises(ConfigError):
        ClusterGanConfig(d_c=2, b=-1)
    cfg = ClusterGanConfig(d_c=155)
    assert (cfg.lambda_gp, cfg.batch_size, cfg.n_critic) == (10.0, 64, 5)
    assert (cfg.a, cfg.b, cfg.c, cfg.sigma) == (1.0, 2.0, 10.0, 0.1)
    assert (cfg.alpha, cfg.beta1, cfg.beta2, cfg.iterations) == (1e-4, 0.5, 0.9, 30000)
    assert cfg.latent_dim == 185


# ------------------------------------------------------------------ critic


def unit_linear_critic(rng, dim):
    w = rng.normal(size=(1, dim))
    w /= np.linalg.norm(w)
    return MlpModel([Layer(w, np.array([0.3]), "linear")])


def test_gp_zero_for_unit_norm_linear_critic(rng):
    disc = unit_linear_critic(rng, 6)
    real, fake = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    res = wgan_critic_loss(disc, real, fake, 10.0, rng=rng)
    assert abs(res.gp) < 1e-10


def test_gp_positive_for_random_relu_critic(rng):
    disc = init_mlp([6, 8, 8, 1], rng, dtype=np.float64)
    assert gradient_penalty(disc, rng.normal(size=(10, 6))) > 0


def test_identical_batches_cancel(rng):
    disc = init_mlp([6, 8, 8, 1], rng, dtype=np.float64)
    x = rng.normal(size=(7, 6))
    res = wgan_critic_loss(disc, x, x.copy(), 0.0, rng=rng)
    assert res.wasserstein == pytest.approx(0.0, abs=1e-12)
    assert res.loss == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_critic_gradient_finite_differences(seed):
    assert gradcheck.critic_case(np.random.default_rng(seed)) < 1e-4


def test_critic_batch_mismatch(rng):
    disc = init_mlp([4, 2, 1], rng)
    with pytest.raises(ValueError):
        wgan_critic_loss(disc, np.zeros((3, 4)), np.zeros((2, 4)), 10.0, rng=rng)


# ------------------------------------------------------------------ cosine


def test_cosine_loss_reference_values():
    z = np.array([[1.0, 2.0, -0.5]])
    assert cosine_recovery_loss(z, z) == pytest.approx(0.0, abs=1e-15)
    assert cosine_recovery_loss(z, -z) == pytest.approx(2.0)
    orth = np.array([[2.0, -1.0, 0.0]])
    assert cosine_recovery_loss(z, orth) == pytest.approx(1.0)


def test_cosine_loss_degenerate_row():
    with pytest.raises(DegenerateVectorError):
        cosine_recovery_loss(np.ones((2, 3)), np.array([[1.0, 0, 0], [0, 0, 0]]))


finite_rows = arrays(np.float64, (4, 5), elements=st.floats(-10, 10)).filter(
    lambda a: (np.linalg.norm(a, axis=1) > 1e-3).all()
)


@settings(max_examples=60, deadline=None)
@given(finite_rows, finite_rows, st.floats(1e-3, 1e3))
def test_cosine_loss_range_and_scale_invariance(z, zh, t):
    loss = cosine_recovery_loss(z, zh)
    assert -1e-12 <= loss <= 2 + 1e-12
    assert cosine_recovery_loss(z, t * zh) == pytest.approx(loss, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_cosine_gradient_finite_differences(seed):
    assert gradcheck.cosine_case(np.random.default_rng(10 + seed)) < 1e-4


# --------------------------------------------------------------------- CE


def test_ce_reference_values():
    zc = np.eye(4)[[0, 3, 1]]
    assert cluster_ce_loss(zc, zc) == pytest.approx(0.0, abs=1e-15)
    uniform = np.full((3, 4), 0.25)
    assert cluster_ce_loss(zc, uniform) == pytest.approx(math.log(4), abs=1e-12)
    loss, _ = cluster_ce_from_logits(zc, np.zeros((3, 4)))
    assert loss == pytest.approx(1.3863, abs=1e-4)


def test_ce_zero_probability_is_clamped():
    before = CE_CLAMPS.count
    with pytest.warns(UserWarning):
        loss = cluster_ce_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert loss == pytest.approx(-math.log(1e-30))
    assert CE_CLAMPS.count == before + 1


def test_ce_rejects_unnormalised_rows():
    with pytest.raises(ValueError):
        cluster_ce_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.6]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-20, 20)), st.lists(st.integers(0, 4), min_size=3, max_size=3))
def test_ce_fused_matches_probability_path(logits, idx):
    zc = np.eye(5)[idx]
    fused, _ = cluster_ce_from_logits(zc, logits)
    assert fused >= 0
    assert fused == pytest.approx(cluster_ce_loss(zc, softmax(logits)), rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_ce_gradient_finite_differences(seed):
    assert gradcheck.ce_case(np.random.default_rng(20 + seed)) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_joint_generator_gradient_finite_differences(seed):
    assert gradcheck.joint_case(np.random.default_rng(30 + seed)) < 1e-4


# --------------------------------------------------------------- training


def test_zero_iterations_returns_initial_model(rng):
    x, y = tiny_data(rng)
    cfg = tiny_config(iterations=0)
    model, history = train(cfg, x, y)
    init = initial_model(cfg)
    assert history == []
    assert model.iteration == 0
    for net, ref in zip(model.nets().values(), init.nets().values()):
        for p, q in zip(net.params(), ref.params()):
            assert p.tobytes() == q.tobytes()


def test_update_counts_in_log(rng):
    x, y = tiny_data(rng)
    cfg = tiny_config(iterations=7, n_critic=3)
    _, history = train(cfg, x, y)
    assert len(history) == 7
    assert history[-1]["critic_updates"] == 21
    assert history[-1]["generator_updates"] == 7
    assert [h["iteration"] for h in history] == list(range(1, 8))
    for key in ("critic_loss", "generator_loss", "cos", "ce", "wall_time"):
        assert all(np.isfinite(h[key]) for h in history)


def test_training_is_deterministic(rng, tmp_path):
    x, y = tiny_data(rng)
    cfg = tiny_config(iterations=6)
    a, _ = train(cfg, x, y)
    b, _ = train(cfg, x, y)
    a.save(tmp_path / "a.ckpt")
    b.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    c, _ = train(tiny_config(iterations=6, seed=1), x, y)
    c.save(tmp_path / "c.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() != (tmp_path / "c.ckpt").read_bytes()


def test_checkpoint_round_trip(rng, tmp_path):
    x, y = tiny_data(rng)
    model, _ = train(tiny_config(iterations=3), x, y, speaker_table=["ann", "bob", "cy"])
    model.save(tmp_path / "m.ckpt")
    back = ClusterGanModel.load(tmp_path / "m.ckpt")
    assert back.speaker_table == ["ann", "bob", "cy"]
    assert back.iteration == 3
    assert back.config == model.config
    np.testing.assert_array_equal(encode(back, x), encode(model, x))


def test_training_rejects_bad_inputs(rng):
    x, y = tiny_data(rng)
    with pytest.raises(ConfigError):
        train(tiny_config(), x, np.where(y == 2, 0, y))  # class 2 empty
    with pytest.raises(ConfigError):
        train(tiny_config(batch_size=100), x, y)
    with pytest.raises(ValueError):
        train(tiny_config(), x[:, :5], y)


def test_divergence_reports_last_good_state(rng):
    x, y = tiny_data(rng)
    x[:] = 3e38  # float32 overflow in the first matmul
    with pytest.raises(TrainingDiverged) as info, pytest.warns(RuntimeWarning):
        train(tiny_config(), x, y)
    exc = info.value
    assert exc.iteration == 0
    for net in exc.model.nets().values():
        assert all(np.isfinite(p).all() for p in net.params())


# ---------------------------------------------------------------- encode


def test_encode_shape_and_softmax(rng):
    x, y = tiny_data(rng)
    model, _ = train(tiny_config(iterations=2), x, y)
    z = encode(model, x)
    assert z.shape == (len(x), 4 + 3)
    np.testing.assert_allclose(z[:, 4:].sum(axis=1), 1.0, atol=1e-5)
    with pytest.raises(ValueError):
        encode(model, x[:, :3])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 10), min_size=1, max_size=8))
def test_encode_partition_invariance(chunks):
    rng = np.random.default_rng(5)
    model = initial_model(ClusterGanConfig(d_c=3, d_n=5, embedding_dim=32, hidden=64))
    x = rng.normal(size=(sum(chunks), 32))
    whole = encode(model, x)
    parts, start = [], 0
    for c in chunks:
        parts.append(encode(model, x[start : start + c]))
        start += c
    assert np.concatenate(parts).tobytes() == whole.tobytes()
