import numpy as np
import pytest

from mobman import flow as fl
from mobman.datasets import Demonstration
from mobman.flow import (
    AdamW,
    ChunkPolicy,
    FlowNet,
    Normalization,
    TrainConfig,
    co_train,
    compute_normalization,
    fm_loss,
    interpolate,
    learning_rate,
    load_checkpoint,
    sample_actions,
    sample_batch,
    save_checkpoint,
    tau_embedding,
)


def tiny_net(seed=0):
    return FlowNet(obs_dim=3, horizon=2, act_dim=2, hidden=(16, 16), seed=seed)


def toy_demos(n=4, steps=12, obs_dim=3, act_dim=2, seed=0):
    gen = np.random.default_rng(seed)
    demos = []
    for i in range(n):
        obs = gen.normal(size=(steps, obs_dim)).astype(np.float32)
        act = gen.normal(size=(steps, act_dim)).astype(np.float32)
        demos.append(Demonstration("toy", seed, i, True, obs, act, {}))
    return demos


def test_tau_embedding_shape_and_values():
    emb = tau_embedding(0.0)
    assert emb.shape == (fl.TAU_EMBED_DIM,)
    np.testing.assert_allclose(emb[: fl.TAU_EMBED_DIM // 2], 0.0, atol=1e-12)
    np.testing.assert_allclose(emb[fl.TAU_EMBED_DIM // 2 :], 1.0, atol=1e-12)
    batch = tau_embedding(np.array([0.1, 0.9]))
    assert batch.shape == (2, fl.TAU_EMBED_DIM)


def test_interpolate_endpoints():
    gen = np.random.default_rng(0)
    a = gen.normal(size=(5, 2, 3))
    z = gen.normal(size=(5, 2, 3))
    np.testing.assert_array_equal(interpolate(a, z, 0.0), z)
    np.testing.assert_array_equal(interpolate(a, z, 1.0), a)
    mid = interpolate(a, z, np.full(5, 0.5))
    np.testing.assert_allclose(mid, 0.5 * (a + z), atol=1e-12)


def test_loss_gradient_matches_finite_differences():
    net = tiny_net()
    gen = np.random.default_rng(1)
    obs = gen.normal(size=(6, 3))
    chunks = gen.normal(size=(6, 2, 2))
    _, grads = fm_loss(net, obs, chunks, seed=3)
    flat_grad = np.concatenate([g.ravel() for g in grads])
    flat = net.get_flat()
    h = 1e-6
    picks = gen.choice(flat.size, size=80, replace=False)
    for i in picks:
        fp = flat.copy()
        fp[i] += h
        net.set_flat(fp)
        lp, _ = fm_loss(net, obs, chunks, seed=3)
        fm = flat.copy()
        fm[i] -= h
        net.set_flat(fm)
        lm, _ = fm_loss(net, obs, chunks, seed=3)
        net.set_flat(flat)
        fd = (lp - lm) / (2 * h)
        scale = max(1.0, abs(fd))
        assert abs(flat_grad[i] - fd) / scale < 1e-6


def test_fm_loss_deterministic():
    net = tiny_net()
    gen = np.random.default_rng(2)
    obs = gen.normal(size=(4, 3))
    chunks = gen.normal(size=(4, 2, 2))
    l1, g1 = fm_loss(net, obs, chunks, seed=7, episode=1)
    l2, g2 = fm_loss(net, obs, chunks, seed=7, episode=1)
    assert l1 == l2
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a, b)
    l3, _ = fm_loss(net, obs, chunks, seed=7, episode=2)
    assert l3 != l1
    with pytest.raises(ValueError):
        fm_loss(net, obs[:0], chunks[:0], seed=0)


def test_perfect_field_gives_zero_loss():
    # If the network output exactly equals A - Z the loss must vanish; check
    # the loss formula itself on a hand-built residual instead.
    net = tiny_net()
    gen = np.random.default_rng(3)
    chunks = gen.normal(size=(3, 2, 2))
    obs = gen.normal(size=(3, 3))
    loss, _ = fm_loss(net, obs, chunks, seed=5)
    assert loss > 0.0  # random net cannot be exact
    # Oracle: recompute with the same draws.
    from mobman import rng as mrng

    g = mrng.stream(5, 0, mrng.STREAM_TRAIN)
    z = g.normal(size=chunks.shape)
    tau = g.integers(0, 100, size=3) / 100
    x_tau = interpolate(chunks, z, tau)
    v = net.forward(tau, x_tau, obs)
    expect = float(np.mean(np.sum((v - (chunks - z)).reshape(3, -1) ** 2, axis=1)))
    assert abs(loss - expect) < 1e-12


def test_learning_rate_schedule():
    cfg = TrainConfig(total_steps=1000, warmup_steps=100, peak_lr=1e-3, min_lr=1e-5)
    assert learning_rate(cfg, 0) == 0.0
    assert abs(learning_rate(cfg, 50) - 5e-4) < 1e-12
    assert abs(learning_rate(cfg, 100) - 1e-3) < 1e-12
    assert abs(learning_rate(cfg, 1000) - 1e-5) < 1e-12
    mid = learning_rate(cfg, 550)
    assert 1e-5 < mid < 1e-3
    with pytest.raises(ValueError):
        TrainConfig(total_steps=10, warmup_steps=20)


def test_adamw_clips_global_norm():
    cfg = TrainConfig(clip_norm=1.0, weight_decay=0.0)
    p = np.zeros(4)
    opt = AdamW([p], cfg)
    opt.step([np.full(4, 100.0)], lr=1.0)
    # First Adam step magnitude is ~lr regardless, but m/v see the clipped grad.
    assert np.all(np.isfinite(p))
    expected_g = 100.0 * min(1.0, 1.0 / np.sqrt(4 * 100.0**2))
    np.testing.assert_allclose(opt.m[0], 0.1 * expected_g, atol=1e-12)


def test_adamw_decoupled_weight_decay():
    cfg = TrainConfig(weight_decay=0.01)
    p = np.array([1.0, -2.0])
    opt = AdamW([p], cfg)
    opt.step([np.zeros(2)], lr=0.5)
    np.testing.assert_allclose(p, np.array([1.0, -2.0]) * (1 - 0.5 * 0.01), atol=1e-12)


def test_sample_actions_shape_and_determinism():
    net = tiny_net()
    obs = np.zeros(3)
    a = sample_actions(net, obs, 10, seed=1, episode=0)
    b = sample_actions(net, obs, 10, seed=1, episode=0)
    assert a.shape == (2, 2)
    np.testing.assert_array_equal(a, b)
    c = sample_actions(net, obs, 10, seed=2, episode=0)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        sample_actions(net, obs, 0, seed=0)


def test_normalization_round_trip():
    demos = toy_demos()
    norm = compute_normalization(demos)
    gen = np.random.default_rng(4)
    act = gen.normal(size=(5, 2))
    np.testing.assert_allclose(norm.denorm_act(norm.norm_act(act)), act, atol=1e-9)
    obs = np.concatenate([d.observations for d in demos]).astype(np.float64)
    normed = norm.norm_obs(obs)
    np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-9)


def test_sample_batch_mixture_fraction():
    sim = toy_demos(seed=0)
    real = toy_demos(seed=1)
    norm = compute_normalization(sim + real)
    gen = np.random.default_rng(5)
    total = sim_count = 0
    for _ in range(100):
        _, _, from_sim = sample_batch(sim, real, 2, 64, gen, norm)
        sim_count += int(from_sim.sum())
        total += 64
    frac = sim_count / total
    assert 0.45 < frac < 0.55
    # One-sided pools never draw from the other side.
    _, _, from_sim = sample_batch(sim, [], 2, 32, gen, norm)
    assert from_sim.all()
    _, _, from_sim = sample_batch([], real, 2, 32, gen, norm)
    assert not from_sim.any()


def test_co_train_reduces_loss():
    net = FlowNet(obs_dim=3, horizon=2, act_dim=2, hidden=(32, 32), seed=0)
    cfg = TrainConfig(total_steps=300, warmup_steps=30, peak_lr=1e-3,
                      batch_size=32, seed=0)
    result = co_train(net, toy_demos(seed=0), toy_demos(seed=1), cfg)
    first = np.mean([l for _, l, _ in result.history[:20]])
    last = np.mean([l for _, l, _ in result.history[-20:]])
    assert last < first
    assert len(result.history) == 300
    with pytest.raises(ValueError):
        co_train(net, [], [], cfg)


def test_checkpoint_round_trip(tmp_path):
    net = tiny_net(seed=3)
    cfg = TrainConfig(total_steps=10, warmup_steps=5, seed=3)
    demos = toy_demos()
    norm = compute_normalization(demos)
    result = fl.TrainResult(net, norm, [])
    save_checkpoint(result, cfg, tmp_path / "ckpt")
    net2, norm2, fields = load_checkpoint(tmp_path / "ckpt")
    # Params survive the float32 block format; compare after one round trip.
    for p, q in zip(net.params, net2.params):
        np.testing.assert_array_equal(p.astype(np.float32).astype(np.float64), q)
    np.testing.assert_array_equal(
        norm.obs_mean.astype(np.float32).astype(np.float64), norm2.obs_mean)
    assert fields["infer_steps"] == "10"


def test_chunk_policy_execute_horizon():
    net = FlowNet(obs_dim=3, horizon=4, act_dim=2, hidden=(8,), seed=0)
    norm = Normalization(np.zeros(3), np.ones(3), np.zeros(2), np.ones(2))
    policy = ChunkPolicy(net, norm)
    acts = policy.actions(np.zeros(3), seed=0)
    assert acts.shape == (2, 2)  # H // 2 by default
    policy = ChunkPolicy(net, norm, execute_horizon=3)
    assert policy.actions(np.zeros(3), seed=0).shape == (3, 2)


class _CountdownEnv:
    """Succeeds after enough steps; exercises the rollout loop."""

    def __init__(self, needed):
        self.needed = needed
        self.count = 0

    def reset(self):
        self.count = 0
        return np.zeros(3)

    def step(self, action):
        self.count += 1
        return np.zeros(3)

    def succeeded(self):
        return self.count >= self.needed


def test_kinematic_rollout_eval_counts_successes():
    net = FlowNet(obs_dim=3, horizon=2, act_dim=2, hidden=(8,), seed=0)
    norm = Normalization(np.zeros(3), np.ones(3), np.zeros(2), np.ones(2))
    policy = ChunkPolicy(net, norm)
    rate = fl.kinematic_rollout_eval(
        policy, lambda ep: _CountdownEnv(needed=5 if ep % 2 == 0 else 100),
        episodes=4, horizon=10)
    assert rate == 0.5
