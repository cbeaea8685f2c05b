import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftrl import numerics as nx
from ftrl.algorithms import (
    AttentionAggregator,
    CMAPPOConfig,
    Flatten,
    GaussianPolicy,
    GRPOConfig,
    GroupBatch,
    PPOConfig,
    RolloutBuffer,
    attention_aggregate,
    cmappo_train,
    collect_rollout,
    compute_gae,
    feature_partition,
    gae,
    gaussian_kl,
    grpo_group_advantages,
    grpo_update,
    mlp_policy,
    ppo_surrogate,
    ppo_update,
    train_grpo,
    write_stats_csv,
)
from ftrl.data import WindowedDataset
from ftrl.envs import ControlEnv, ForecastEnv
from ftrl.numerics import MLP, ContractError


def brute_force_gae(r, v, d, last, gamma, lam):
    """Direct double sum over TD residuals, stopping at the first episode end."""
    n = len(r)
    values = np.append(v, last)
    delta = [r[t] + gamma * values[t + 1] * (1 - d[t]) - v[t] for t in range(n)]
    adv = np.zeros(n)
    for t in range(n):
        total, w = 0.0, 1.0
        for k in range(t, n):
            total += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
        adv[t] = total
    return adv


def buffer(obs, act, logp, rew, val, done, last=0.0):
    return RolloutBuffer(np.asarray(obs, float), np.asarray(act, float), np.asarray(logp, float),
                         np.asarray(rew, float), np.asarray(val, float), np.asarray(done, bool), last)


# ------------------------------------------------------------------ GAE

def test_gae_single_step():
    adv, ret = gae([1.0], [0.5], [False], 0.4, 1.0, 1.0)
    assert adv[0] == pytest.approx(0.9, abs=1e-15)
    assert ret[0] == pytest.approx(1.4, abs=1e-15)


def test_gae_two_steps():
    adv, _ = gae([1.0, 1.0], [0.5, 0.4], [False, False], 0.3, 0.9, 0.8)
    # deltas 1 + 0.9*0.4 - 0.5 = 0.86 and 1 + 0.9*0.3 - 0.4 = 0.87
    assert adv[1] == pytest.approx(0.87, abs=1e-14)
    assert adv[0] == pytest.approx(0.86 + 0.72 * 0.87, abs=1e-14)
    assert adv[0] == pytest.approx(1.4864, abs=1e-12)


def test_gae_done_truncates():
    adv, _ = gae([2.0, 5.0, 7.0], [0.5, 9.0, -3.0], [True, False, False], 11.0, 0.99, 0.95)
    assert adv[0] == 2.0 - 0.5


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 16), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_gae_matches_brute_force(n, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=n), rng.normal(size=n)
    d = rng.random(n) < 0.25
    last = float(rng.normal())
    adv, ret = gae(r, v, d, last, gamma, lam)
    np.testing.assert_allclose(adv, brute_force_gae(r, v, d, last, gamma, lam), rtol=0, atol=1e-10)
    np.testing.assert_allclose(ret, adv + v, rtol=0, atol=0)


def test_gae_rejects_bad_discount():
    with pytest.raises(ContractError):
        gae([1.0], [0.0], [False], 0.0, 1.2, 0.9)
    with pytest.raises(ContractError):
        gae([1.0], [0.0], [False], 0.0, 0.9, -0.1)


def test_compute_gae_stores_results():
    b = buffer([[0.0]] * 2, [[0.0]] * 2, [0, 0], [1, 1], [0.5, 0.4], [False, False], 0.3)
    adv, ret = compute_gae(b, 0.9, 0.8)
    assert b.advantages is adv and b.returns is ret


def test_ppo_config_validation():
    with pytest.raises(ContractError):
        PPOConfig(gamma=1.5)
    with pytest.raises(ContractError):
        PPOConfig(clip_eps=0.0)


# ------------------------------------------------------------------ surrogate

def test_surrogate_examples():
    assert ppo_surrogate(1.5, 1.0, 0.2).item() == pytest.approx(1.2)
    assert ppo_surrogate(0.5, -1.0, 0.2).item() == pytest.approx(-0.8)
    for a in (-3.0, 0.0, 2.5):
        assert ppo_surrogate(1.0, a, 0.2).item() == a


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.booleans())
def test_surrogate_flat_outside_band(eps, excess, adv, upper):
    rho = (1 + eps) * (1 + excess) if upper else (1 - eps) / (1 + excess)
    a = adv if upper else -adv
    r = nx.Tensor(rho, requires_grad=True)
    (g,) = nx.grad(ppo_surrogate(r, a, eps), [r])
    assert g == 0.0


# ------------------------------------------------------------------ policy and rollouts

def test_gaussian_policy_log_prob_sums_dimensions():
    pol = mlp_policy(3, 2, np.random.default_rng(0))
    pol.log_std.data[:] = [0.3, -0.2]
    obs = np.random.default_rng(1).normal(size=(4, 3))
    act = np.random.default_rng(2).normal(size=(4, 2))
    mean, _ = pol.batch_stats(obs)
    manual = sum(nx.gaussian_log_prob(act[:, d], mean[:, d], pol.log_std.data[d]).data for d in range(2))
    np.testing.assert_allclose(pol.log_prob(obs, act).data, manual, rtol=0, atol=1e-14)


def test_value_net_shape():
    pol = mlp_policy(4, 1, np.random.default_rng(0), critic_hidden=256)
    _, v = pol.batch_stats(np.zeros((5, 4)))
    assert v.shape == (5,) and np.isfinite(v).all()


def test_collect_rollout_length_and_log_probs():
    env = ControlEnv("stick-balance")
    pol = mlp_policy(4, 1, np.random.default_rng(0))
    buf = collect_rollout(env, pol, 64, np.random.default_rng(0))
    assert len(buf) == 64 and buf.actions.shape == (64, 1)
    recomputed = pol.log_prob(buf.observations, buf.actions).data
    assert recomputed.tobytes() == buf.log_probs.tobytes()
    assert len(buf.episode_returns) == int(buf.dones.sum())


def test_collect_rollout_deterministic():
    bufs = []
    for _ in range(2):
        env = ControlEnv("stick-balance")
        pol = mlp_policy(4, 1, np.random.default_rng(0))
        bufs.append(collect_rollout(env, pol, 50, 7, deterministic=True))
    for name in ("observations", "actions", "log_probs", "rewards", "values", "dones"):
        assert getattr(bufs[0], name).tobytes() == getattr(bufs[1], name).tobytes()


def _tiny_buffer(advantages, rng):
    pol = mlp_policy(2, 1, np.random.default_rng(0), critic=False)
    obs = rng.normal(size=(len(advantages), 2))
    mean, _ = pol.batch_stats(obs)
    act, lp = pol.sample(mean, rng)
    b = buffer(obs, act, lp, np.zeros(len(obs)), np.zeros(len(obs)), np.zeros(len(obs), bool))
    b.advantages = np.asarray(advantages, float)
    b.returns = np.zeros(len(obs))
    return pol, b


def test_ppo_first_ratio_is_one():
    rng = np.random.default_rng(0)
    pol, b = _tiny_buffer(rng.normal(size=32), rng)
    stats = ppo_update(pol, b, PPOConfig(epochs=2, minibatch_size=32), nx.Adam(1e-3), rng)
    assert stats["first_ratio"] == 1.0
    assert stats["status"] == "ok"


def test_ppo_equal_advantages_leave_policy_unchanged():
    rng = np.random.default_rng(1)
    pol, b = _tiny_buffer(np.full(16, 2.5), rng)
    before = pol.state_arrays()
    ppo_update(pol, b, PPOConfig(epochs=3, minibatch_size=8), nx.Adam(1e-2), rng)
    for a, c in zip(before, pol.state_arrays()):
        np.testing.assert_array_equal(a, c)


def test_ppo_positive_advantage_raises_log_prob():
    rng = np.random.default_rng(2)
    pol, b = _tiny_buffer([1.0, -1.0], rng)
    before = pol.log_prob(b.observations, b.actions).data
    ppo_update(pol, b, PPOConfig(epochs=1, minibatch_size=2), nx.Adam(1e-4), rng)
    after = pol.log_prob(b.observations, b.actions).data
    assert after[0] >= before[0]
    assert after[1] <= before[1]
    # a single sample normalizes to a zero advantage, which leaves it unchanged
    pol, b = _tiny_buffer([1.0], rng)
    before = pol.log_prob(b.observations, b.actions).data
    ppo_update(pol, b, PPOConfig(epochs=1, minibatch_size=1), nx.Adam(1e-4), rng)
    assert pol.log_prob(b.observations, b.actions).data[0] >= before[0]


def test_ppo_non_finite_update_restores_parameters():
    rng = np.random.default_rng(3)
    pol, b = _tiny_buffer(rng.normal(size=8), rng)
    b.log_probs[:] = -1e6  # ratio exp(1e6) overflows
    before = pol.state_arrays()
    stats = ppo_update(pol, b, PPOConfig(epochs=1, minibatch_size=8), nx.Adam(1e-3), rng)
    assert stats["status"] == "aborted"
    for a, c in zip(before, pol.state_arrays()):
        np.testing.assert_array_equal(a, c)


# ------------------------------------------------------------------ attention

def test_attention_equal_scores_average_encodings():
    rng = np.random.default_rng(0)
    agg = AttentionAggregator(5, 2, 4, rng, zero_scores=True)
    e = rng.normal(size=5)
    acts = [rng.normal(size=2) for _ in range(3)]
    d, w = attention_aggregate(e, acts, agg)
    np.testing.assert_allclose(w.data, 0.25, rtol=0, atol=1e-15)
    enc = [agg.g_env(e[None]).data[0]] + [agg.g_sub(a[None]).data[0] for a in acts]
    np.testing.assert_allclose(d.data, np.mean(enc, axis=0), rtol=0, atol=1e-14)


def test_attention_saturates():
    rng = np.random.default_rng(1)
    agg = AttentionAggregator(3, 2, 4, rng, zero_scores=True)
    agg.f_env.bias.data[:] = 30.0
    e = rng.normal(size=3)
    d, w = attention_aggregate(e, [rng.normal(size=2), rng.normal(size=2)], agg)
    assert w.data[0] > 1 - 1e-9
    np.testing.assert_allclose(d.data, agg.g_env(e[None]).data[0], atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31))
def test_attention_weights_form_distribution(n, seed):
    rng = np.random.default_rng(seed)
    agg = AttentionAggregator(4, 3, 5, rng)
    agg.f_env.weight.data = rng.normal(scale=3, size=(4, 1))
    agg.f_sub.weight.data = rng.normal(scale=3, size=(3, 1))
    e, acts = rng.normal(size=(2, 4)), rng.normal(size=(2, n, 3))
    _, w = attention_aggregate(e, acts, agg)
    scores = np.concatenate([agg.f_env(e).data, agg.f_sub(acts.reshape(-1, 3)).data.reshape(2, n)], axis=1)
    assert (w.data >= 0).all()
    np.testing.assert_allclose(w.data.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert (w.data.argmax(axis=1) == scores.argmax(axis=1)).all()


def test_attention_dimension_mismatch():
    agg = AttentionAggregator(3, 2, 4, np.random.default_rng(0))
    with pytest.raises(ContractError):
        attention_aggregate(np.zeros(3), [np.zeros(3)], agg)
    with pytest.raises(ContractError):
        attention_aggregate(np.zeros(4), [np.zeros(2)], agg)


# ------------------------------------------------------------------ CMAPPO

def test_feature_partition_blocks():
    parts = feature_partition(8, 3)
    assert [list(p) for p in parts] == [[0, 1, 2], [3, 4, 5], [6, 7]]
    assert [list(p) for p in feature_partition(8, 1)] == [list(range(8))]
    with pytest.raises(ContractError):
        feature_partition(4, 5)
    with pytest.raises(ContractError):
        feature_partition(4, 3)  # blocks of 2 leave the third subagent empty


def oracle_dataset(M=256, T=3, N=2, seed=0):
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(M, T, N))
    targets = states[:, -1, :1].copy()
    return WindowedDataset(states, targets, np.arange(M), T, 1)


def test_cmappo_single_subagent_sees_everything():
    ds = oracle_dataset(M=64)
    env = ForecastEnv(ds, episode_length=32)
    small = PPOConfig(total_timesteps=64, num_steps=32, epochs=1, minibatch_size=32)
    res = cmappo_train(env, None, CMAPPOConfig(num_subagents=1, sub_ppo=small, super_ppo=small, value_hidden=8), seed=0)
    assert [list(p) for p in res.partitions] == [[0, 1]]
    assert res.superagent.trunk.aggregator.f_sub.in_dim == 1
    assert res.status == "ok"


def test_cmappo_superagent_buffer_holds_final_actions():
    ds = oracle_dataset(M=64)
    env = ForecastEnv(ds, episode_length=32)
    small = PPOConfig(total_timesteps=32, num_steps=32, epochs=1, minibatch_size=32)
    res = cmappo_train(env, None, CMAPPOConfig(num_subagents=2, sub_ppo=small, super_ppo=small, value_hidden=8), seed=0)
    env.done = True
    buf = collect_rollout(env, res.superagent, 16, 0, tag="superagent")
    assert buf.tag == "superagent"
    assert buf.actions.shape == (16, 1) and buf.observations.shape == (16, 3, 2)
    sub_buf = collect_rollout(env, res.subagents[0], 16, 0, tag="subagent0", obs_fn=lambda o: o[..., [0]])
    assert sub_buf.observations.shape == (16, 3, 1)


def test_cmappo_recovers_planted_subagent():
    ds = oracle_dataset(M=256, T=3, N=2)
    env = ForecastEnv(ds, episode_length=64)
    rng = np.random.default_rng(0)
    # subagent 0 reads feature 0 and emits the target exactly; subagent 1 is random
    oracle = GaussianPolicy(Flatten(), MLP([3, 1], rng), 1)
    oracle.mean_head.l0.weight.data[:] = [[0.0], [0.0], [1.0]]
    oracle.mean_head.l0.bias.data[:] = 0.0
    noise = GaussianPolicy(Flatten(), MLP([3, 1], rng), 1)
    sup = PPOConfig(gamma=0.0, lam=0.0, total_timesteps=12_288, num_steps=512, epochs=8, minibatch_size=64, lr=3e-3)
    cfg = CMAPPOConfig(num_subagents=2, super_ppo=sup, enc_dim=8, value_hidden=16)
    res = cmappo_train(env, None, cfg, seed=0, subagents=[oracle, noise])
    pred = res.superagent.predict(ds.states)
    rewards = 2 * np.exp(-((pred - ds.targets) ** 2).mean(axis=1)) - 1
    assert rewards.mean() > 0.95


# ------------------------------------------------------------------ GRPO

def test_group_advantage_examples():
    np.testing.assert_array_equal(grpo_group_advantages([5.0, 5.0, 5.0], 1e-3), 0.0)
    a = grpo_group_advantages([1.0, 2.0, 3.0], 1e-12)
    np.testing.assert_allclose(a, [-1.224745, 0.0, 1.224745], atol=1e-6)
    np.testing.assert_allclose(a, np.array([-1, 0, 1]) / math.sqrt(2 / 3), atol=1e-11)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31))
def test_group_advantages_centred_and_scaled(G, seed):
    r = np.random.default_rng(seed).normal(scale=3.0, size=G)
    a = grpo_group_advantages(r, 1e-8)
    assert abs(a.sum()) <= 1e-12
    assert 0.99 <= a.std() <= 1.0


def test_grpo_config_defaults_and_validation():
    assert GRPOConfig().group_size == 8
    with pytest.raises(ContractError):
        GRPOConfig(group_size=1)
    with pytest.raises(ContractError):
        GRPOConfig(eps_std=0.0)
    with pytest.raises(ContractError):
        GRPOConfig(beta=-1.0)


def test_gaussian_kl_examples():
    assert gaussian_kl(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1)).item() == 0.0
    assert gaussian_kl(np.zeros(1), np.zeros(1), np.ones(1), np.zeros(1)).item() == pytest.approx(0.5, abs=1e-15)
    assert gaussian_kl(np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1)).item() == pytest.approx(0.5, abs=1e-15)


def _group_batch(pol, rng, rewards):
    U, G = rewards.shape
    obs = rng.normal(size=(U, 2))
    mean, _ = pol.batch_stats(obs)
    act, lp = pol.sample(np.repeat(mean, G, axis=0), rng)
    K = U * G
    adv = grpo_group_advantages(rewards, 1e-8).reshape(K)
    return GroupBatch(obs, np.repeat(np.arange(U), G), act, lp, adv, np.full(K, 1.0 / K), rewards.reshape(K), U,
                      rewards[:, 0], [])


def test_grpo_equal_rewards_only_kl_acts():
    rng = np.random.default_rng(0)
    pol = mlp_policy(2, 1, np.random.default_rng(0), critic=False)
    batch = _group_batch(pol, rng, np.ones((6, 4)))
    before = pol.state_arrays()
    stats = grpo_update(pol, batch, GRPOConfig(group_size=4, epochs=2, minibatch_size=3), nx.Adam(1e-2), rng)
    for a, c in zip(before, pol.state_arrays()):
        np.testing.assert_array_equal(a, c)
    assert stats["first_loss"] == 0.0
    ref = [a.copy() for a in before]
    ref[-1] = ref[-1] + 0.5  # reference policy with a wider distribution
    stats = grpo_update(pol, batch, GRPOConfig(group_size=4, beta=1.0, epochs=2, minibatch_size=3),
                        nx.Adam(1e-2), rng, ref=ref)
    assert stats["kl"] > 0
    assert any(not np.array_equal(a, c) for a, c in zip(before, pol.state_arrays()))


def test_grpo_first_pass_ratio_one_and_centred_loss():
    rng = np.random.default_rng(1)
    pol = mlp_policy(2, 1, np.random.default_rng(1), critic=False)
    batch = _group_batch(pol, rng, rng.normal(size=(5, 8)))
    params = pol.trainable_parameters()
    mean, _ = pol.forward(batch.observations)
    logp = pol.log_prob_from_mean(nx.getitem(mean, batch.obs_index), batch.actions)
    ratio = nx.exp(logp - batch.log_probs)
    loss = -nx.sum_(ppo_surrogate(ratio, batch.advantages, 0.2) * batch.weights)
    assert np.all(ratio.data == 1.0)
    assert abs(loss.item()) < 1e-12
    assert any(np.abs(g).max() > 0 for g in nx.grad(loss, params))


def test_grpo_runs_on_forecast_env():
    ds = oracle_dataset(M=64)
    env = ForecastEnv(ds, episode_length=32)
    pol = mlp_policy(6, 1, np.random.default_rng(0), critic=False, flatten=True)
    h = train_grpo(env, pol, GRPOConfig(total_timesteps=64, batch_size=32, epochs=1), seed=0)
    assert [r["step"] for r in h.rows] == [32, 64]
    assert h.status == "ok"


def test_stats_csv(tmp_path):
    path = tmp_path / "stats.csv"
    write_stats_csv([{"step": 1, "episodic_return": 2.0, "kl": 0.1}], path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("step,episodic_return")
    assert lines[1].startswith("1,2.0")
