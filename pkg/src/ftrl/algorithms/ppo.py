"""Proximal policy optimization with generalized advantage estimation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import numerics as nx
from ..numerics import Adam, ContractError, NonFiniteError, Tensor
from .policy import GaussianPolicy


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    lr: float = 3e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    total_timesteps: int = 500_000
    num_steps: int = 2048
    max_grad_norm: float = 0.5

    def __post_init__(self):
        _check_unit("gamma", self.gamma)
        _check_unit("lam", self.lam)
        if self.clip_eps <= 0:
            raise ContractError(f"clip_eps must be > 0, got {self.clip_eps}")
        if self.epochs < 1 or self.minibatch_size < 1 or self.num_steps < 1:
            raise ContractError("epochs, minibatch_size and num_steps must be >= 1")
        if self.total_timesteps < 0 or self.lr < 0:
            raise ContractError("total_timesteps and lr must be >= 0")


def _check_unit(name: str, v: float) -> None:
    if not 0.0 <= v <= 1.0:
        raise ContractError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class RolloutBuffer:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float
    tag: str = "policy"
    episode_returns: list[float] = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.observations)
        for name in ("actions", "log_probs", "rewards", "values", "dones"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"buffer field {name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.observations)


def gae(rewards, values, dones, last_value: float, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for one trajectory segment.

    ``values[t]`` is V(o_t); the value after the final step is
    ``last_value``. A done flag at t cuts both the bootstrap and the
    accumulation, so nothing after an episode end leaks backwards.
    """
    _check_unit("gamma", gamma)
    _check_unit("lam", lam)
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    next_value = float(last_value)
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    adv, ret = gae(buffer.rewards, buffer.values, buffer.dones, buffer.last_value, gamma, lam)
    buffer.advantages, buffer.returns = adv, ret
    return adv, ret


def ppo_surrogate(ratio, advantage, clip_eps: float) -> Tensor:
    """min(rho * A, clip(rho, 1 - eps, 1 + eps) * A), elementwise."""
    ratio = nx.as_tensor(ratio)
    advantage = nx.as_tensor(advantage)
    return nx.minimum(ratio * advantage, nx.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage)


def normalize(x: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return (x - x.mean()) / max(float(x.std()), floor)


def collect_rollout(env, policy: GaussianPolicy, num_steps: int, rng: np.random.Generator | int,
                    deterministic: bool = False, tag: str = "policy",
                    obs_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> RolloutBuffer:
    """Run ``policy`` in ``env`` for exactly ``num_steps`` transitions.

    A finished environment is reset with a seed drawn from ``rng``; an
    unfinished one is resumed from its current observation. ``obs_fn`` maps
    raw observations to what the policy sees (feature slices for subagents).
    """
    if num_steps < 1:
        raise ContractError("num_steps must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    view = obs_fn or (lambda o: o)
    obs_list, act, logp, rew, val, done = [], [], [], [], [], []
    returns: list[float] = []
    obs = env.reset(seed=int(rng.integers(2**31))) if env.done else env.observation()
    running = getattr(env, "_running_return", 0.0)
    for _ in range(num_steps):
        o = view(obs)
        a, lp, v = policy.act(o, rng, deterministic)
        res = env.step(a)
        obs_list.append(o)
        act.append(a)
        logp.append(lp)
        rew.append(res.reward)
        val.append(v)
        done.append(res.done)
        running += res.reward
        if res.done:
            returns.append(running)
            running = 0.0
            obs = env.reset(seed=int(rng.integers(2**31)))
        else:
            obs = res.observation
    env._running_return = running
    if done[-1]:
        last_value = 0.0
    else:
        last_value = policy.act(view(obs), None, True)[2]
    return RolloutBuffer(np.array(obs_list), np.array(act), np.array(logp), np.array(rew), np.array(val),
                         np.array(done), last_value, tag, returns)


def _unique_params(policy) -> list[Tensor]:
    return policy.trainable_parameters()


def _apply_step(policy: GaussianPolicy, params: list[Tensor], grads: list[np.ndarray],
                optimizer: Adam, max_grad_norm: float) -> float:
    grads, norm = nx.clip_grad_norm(grads, max_grad_norm)
    if not np.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    optimizer.step(params, grads)
    policy.clamp_log_std()
    return norm


def ppo_update(policy: GaussianPolicy, buffer: RolloutBuffer, config: PPOConfig, optimizer: Adam,
               rng: np.random.Generator) -> dict:
    """Clipped-surrogate epochs over shuffled minibatches of ``buffer``.

    Returns the mean ratio, clip fraction, losses and approximate KL. A
    non-finite loss or gradient restores the parameters held before the
    update and reports ``status='aborted'``.
    """
    if buffer.advantages is None:
        raise ContractError("compute advantages before ppo_update")
    params = _unique_params(policy)
    snapshot = policy.state_arrays()
    n = len(buffer)
    mb = min(config.minibatch_size, n)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "ratio": [], "clip_fraction": [], "kl": []}
    try:
        for _ in range(config.epochs):
            perm = rng.permutation(n)
            for s in range(0, n, mb):
                idx = perm[s:s + mb]
                mean, value = policy.forward(buffer.observations[idx], training=True)
                logp = policy.log_prob_from_mean(mean, buffer.actions[idx])
                log_ratio = logp - buffer.log_probs[idx]
                ratio = nx.exp(log_ratio)
                adv = normalize(buffer.advantages[idx])
                surr = ppo_surrogate(ratio, adv, config.clip_eps)
                policy_loss = -nx.mean(surr)
                loss = policy_loss
                v_loss = 0.0
                if value is not None:
                    vl = nx.mean(nx.square(value - buffer.returns[idx]))
                    loss = loss + vl * config.value_coef
                    v_loss = vl.item()
                ent = policy.entropy()
                if config.entropy_coef:
                    loss = loss - ent * config.entropy_coef
                if not np.isfinite(loss.item()):
                    raise NonFiniteError("non-finite PPO loss")
                grads = nx.grad(loss, params)
                _apply_step(policy, params, grads, optimizer, config.max_grad_norm)
                r = ratio.data
                stats["policy_loss"].append(policy_loss.item())
                stats["value_loss"].append(v_loss)
                stats["entropy"].append(ent.item())
                stats["ratio"].append(float(r.mean()))
                stats["clip_fraction"].append(float(np.mean(np.abs(r - 1.0) > config.clip_eps)))
                stats["kl"].append(float(np.mean(-log_ratio.data)))
    except NonFiniteError as exc:
        policy.load_arrays(snapshot)
        return {"status": "aborted", "error": str(exc)}
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["first_ratio"] = stats["ratio"][0]
    out["status"] = "ok"
    return out


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)
    status: str = "ok"

    def mean_return(self, last: int = 10) -> float:
        if not self.episode_returns:
            return float("nan")
        return float(np.mean(self.episode_returns[-last:]))


def train_ppo(env, policy: GaussianPolicy, config: PPOConfig, seed: int = 0, tag: str = "policy",
              obs_fn=None, callback: Callable[[int, dict], bool | None] | None = None,
              optimizer: Adam | None = None) -> TrainHistory:
    """Alternate rollouts and updates until ``total_timesteps`` transitions.

    ``callback(step, row)`` runs after every update; returning True stops
    training early.
    """
    rng = np.random.default_rng(seed)
    opt = optimizer or Adam(config.lr)
    hist = TrainHistory()
    steps = 0
    env.done = True
    while steps < config.total_timesteps:
        n = min(config.num_steps, config.total_timesteps - steps)
        buf = collect_rollout(env, policy, n, rng, tag=tag, obs_fn=obs_fn)
        compute_gae(buf, config.gamma, config.lam)
        row = ppo_update(policy, buf, config, opt, rng)
        steps += n
        hist.episode_returns.extend(buf.episode_returns)
        row["step"] = steps
        row["mean_reward"] = float(buf.rewards.mean())
        row["episodic_return"] = float(np.mean(buf.episode_returns)) if buf.episode_returns else float("nan")
        hist.rows.append(row)
        if row["status"] != "ok":
            hist.status = "diverged"
            break
        if callback is not None and callback(steps, row):
            break
    return hist
