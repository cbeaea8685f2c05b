"""Group relative policy optimization: critic-free, group-normalized advantages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import numerics as nx
from ..numerics import Adam, ContractError, NonFiniteError
from .policy import GaussianPolicy, gaussian_kl
from .ppo import TrainHistory, _apply_step, ppo_surrogate


@dataclass
class GRPOConfig:
    group_size: int = 8
    eps_std: float = 1e-8
    clip_eps: float = 0.2
    beta: float = 0.0
    ref_every: int = 1           # refresh pi_ref every this many update rounds
    lr: float = 3e-4
    total_timesteps: int = 500_000
    batch_size: int = 64         # observations per update round on forecasting envs
    epochs: int = 4
    minibatch_size: int = 16     # observations per minibatch
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if self.group_size < 2:
            raise ContractError(f"group_size must be >= 2, got {self.group_size}")
        if self.eps_std <= 0:
            raise ContractError("eps_std must be > 0")
        if self.beta < 0:
            raise ContractError("beta must be >= 0")
        if self.clip_eps <= 0:
            raise ContractError("clip_eps must be > 0")
        if min(self.ref_every, self.batch_size, self.epochs, self.minibatch_size) < 1:
            raise ContractError("ref_every, batch_size, epochs and minibatch_size must be >= 1")


def grpo_group_advantages(rewards, eps_std: float = 1e-8) -> np.ndarray:
    """(r_i - mean) / (population std + eps_std) along the last axis."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[-1] < 2:
        raise ContractError("a group needs at least 2 rewards")
    mu = r.mean(axis=-1, keepdims=True)
    # the float mean of equal values can miss them by an ulp; such groups carry no signal
    equal = np.all(r == r[..., :1], axis=-1, keepdims=True)
    centred = np.where(equal, 0.0, r - mu)
    sd = np.sqrt(np.mean(centred * centred, axis=-1, keepdims=True))
    return centred / (sd + eps_std)


@dataclass
class GroupBatch:
    """Grouped samples. Sample k belongs to observation ``obs_index[k]``.

    ``weights`` sum to one and make every group count equally, and every
    trajectory count equally inside its group.
    """

    observations: np.ndarray
    obs_index: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    weights: np.ndarray
    rewards: np.ndarray
    env_steps: int
    step_rewards: np.ndarray
    episode_returns: list[float]

    def __len__(self) -> int:
        return len(self.actions)


def collect_forecast_groups(env, policy: GaussianPolicy, num_obs: int, group_size: int,
                            rng: np.random.Generator, eps_std: float) -> GroupBatch:
    """One decision per window: G candidates are scored against the revealed
    target without advancing, then the environment steps on the first one."""
    if env.done:
        env.reset(seed=int(rng.integers(2**31)))
    obs, acts, lps, rews, step_r = [], [], [], [], []
    for _ in range(num_obs):
        o = env.observation()
        mean, _ = policy.batch_stats(o[None])
        a, lp = policy.sample(np.repeat(mean, group_size, axis=0), rng)
        r = env.score(a)
        res = env.step(a[0])
        obs.append(o)
        acts.append(a)
        lps.append(lp)
        rews.append(r)
        step_r.append(res.reward)
        if res.done:
            env.reset(seed=int(rng.integers(2**31)))
    rewards = np.array(rews)
    adv = grpo_group_advantages(rewards, eps_std)
    K = num_obs * group_size
    return GroupBatch(np.array(obs), np.repeat(np.arange(num_obs), group_size), np.concatenate(acts),
                      np.concatenate(lps), adv.reshape(K), np.full(K, 1.0 / K), rewards.reshape(K),
                      num_obs, np.array(step_r), [])


def collect_episode_groups(env, policy: GaussianPolicy, group_size: int, rng: np.random.Generator,
                           eps_std: float) -> GroupBatch:
    """G episodes from one shared reset seed, scored by episodic return."""
    seed = int(rng.integers(2**31))
    obs, acts, lps, adv_slots, w, returns = [], [], [], [], [], []
    step_r = []
    for g in range(group_size):
        o = env.reset(seed=seed)
        ep_obs, ep_act, ep_lp, total = [], [], [], 0.0
        while True:
            a, lp, _ = policy.act(o, rng)
            res = env.step(a)
            ep_obs.append(o)
            ep_act.append(a)
            ep_lp.append(lp)
            step_r.append(res.reward)
            total += res.reward
            o = res.observation
            if res.done:
                break
        n = len(ep_obs)
        obs.extend(ep_obs)
        acts.extend(ep_act)
        lps.extend(ep_lp)
        adv_slots.extend([g] * n)
        w.extend([1.0 / (n * group_size)] * n)
        returns.append(total)
    adv = grpo_group_advantages(np.array(returns), eps_std)
    slots = np.array(adv_slots)
    K = len(obs)
    return GroupBatch(np.array(obs), np.arange(K), np.array(acts), np.array(lps), adv[slots], np.array(w),
                      np.array(returns)[slots], K, np.array(step_r), returns)


def _ref_means(policy: GaussianPolicy, ref: list[np.ndarray] | None, observations: np.ndarray):
    current = None
    if ref is not None:
        current = policy.state_arrays()
        policy.load_arrays(ref)
    try:
        mean, _ = policy.batch_stats(observations)
        log_std = policy.log_std.data.copy()
    finally:
        if current is not None:
            policy.load_arrays(current)
    return mean, log_std


def grpo_update(policy: GaussianPolicy, batch: GroupBatch, config: GRPOConfig, optimizer: Adam,
                rng: np.random.Generator, ref: list[np.ndarray] | None = None) -> dict:
    """Maximize the weighted clipped surrogate minus beta * KL(pi || pi_ref).

    ``ref`` holds the reference parameters; None means the reference is the
    policy as it stands when the update begins. No value function is used.
    """
    params = policy.trainable_parameters()
    snapshot = policy.state_arrays()
    U = len(batch.observations)
    ref_mean = ref_log_std = None
    if config.beta > 0:
        ref_mean, ref_log_std = _ref_means(policy, ref, batch.observations)
    order = np.argsort(batch.obs_index, kind="stable")
    bounds = np.searchsorted(batch.obs_index[order], np.arange(U + 1))
    mb = min(config.minibatch_size, U)
    stats = {"loss": [], "ratio": [], "clip_fraction": [], "kl": []}
    try:
        for _ in range(config.epochs):
            perm = rng.permutation(U)
            for s in range(0, U, mb):
                chosen = np.sort(perm[s:s + mb])
                samples = np.concatenate([order[bounds[u]:bounds[u + 1]] for u in chosen])
                local = np.searchsorted(chosen, batch.obs_index[samples])
                mean, _ = policy.forward(batch.observations[chosen], training=True)
                logp = policy.log_prob_from_mean(nx.getitem(mean, local), batch.actions[samples])
                ratio = nx.exp(logp - batch.log_probs[samples])
                w = batch.weights[samples]
                w = w / w.sum()
                surr = ppo_surrogate(ratio, batch.advantages[samples], config.clip_eps)
                loss = -nx.sum_(surr * w)
                kl_val = 0.0
                if config.beta > 0:
                    kl = nx.mean(gaussian_kl(mean, policy.log_std, ref_mean[chosen], ref_log_std))
                    loss = loss + kl * config.beta
                    kl_val = kl.item()
                if not np.isfinite(loss.item()):
                    raise NonFiniteError("non-finite GRPO loss")
                grads = nx.grad(loss, params)
                _apply_step(policy, params, grads, optimizer, config.max_grad_norm)
                r = ratio.data
                stats["loss"].append(loss.item())
                stats["ratio"].append(float(r.mean()))
                stats["clip_fraction"].append(float(np.mean(np.abs(r - 1.0) > config.clip_eps)))
                stats["kl"].append(kl_val)
    except NonFiniteError as exc:
        policy.load_arrays(snapshot)
        return {"status": "aborted", "error": str(exc)}
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["first_ratio"] = stats["ratio"][0]
    out["first_loss"] = stats["loss"][0]
    out["status"] = "ok"
    return out


def train_grpo(env, policy: GaussianPolicy, config: GRPOConfig, seed: int = 0,
               callback: Callable[[int, dict], bool | None] | None = None,
               optimizer: Adam | None = None) -> TrainHistory:
    """Forecasting environments are treated as contextual bandits (one
    decision per window); control environments use groups of whole
    episodes. Timesteps count environment steps."""
    rng = np.random.default_rng(seed)
    opt = optimizer or Adam(config.lr)
    hist = TrainHistory()
    steps, rounds = 0, 0
    ref = None
    env.done = True
    bandit = hasattr(env, "score")
    while steps < config.total_timesteps:
        if rounds % config.ref_every == 0:
            ref = None  # the policy at the start of this round
            ref_arrays = policy.state_arrays()
        if bandit:
            n = min(config.batch_size, config.total_timesteps - steps)
            batch = collect_forecast_groups(env, policy, n, config.group_size, rng, config.eps_std)
        else:
            batch = collect_episode_groups(env, policy, config.group_size, rng, config.eps_std)
            hist.episode_returns.extend(batch.episode_returns)
        row = grpo_update(policy, batch, config, opt, rng, ref)
        ref = ref_arrays
        steps += batch.env_steps
        rounds += 1
        row["step"] = steps
        row["mean_reward"] = float(batch.step_rewards.mean())
        row["episodic_return"] = float(np.mean(batch.episode_returns)) if batch.episode_returns else float("nan")
        hist.rows.append(row)
        if row["status"] != "ok":
            hist.status = "diverged"
            break
        if callback is not None and callback(steps, row):
            break
    return hist
