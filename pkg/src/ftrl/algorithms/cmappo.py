"""Centralized multi-agent PPO.

Subagents each see a contiguous block of feature columns and are trained
first, by independent PPO on their own forecast reward. They are then
frozen; a superagent attends over an encoding of the full observation and
the subagents' mean actions, and is trained by PPO on the environment
reward of its own final action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..numerics import ContractError, Linear, Module, Tensor
from .policy import BackboneLatent, GaussianPolicy, Identity, ValueNet, mlp_policy
from .ppo import PPOConfig, TrainHistory, train_ppo


@dataclass
class CMAPPOConfig:
    num_subagents: int = 10
    sub_ppo: PPOConfig = field(default_factory=PPOConfig)
    super_ppo: PPOConfig = field(default_factory=PPOConfig)
    enc_dim: int = 32
    hidden: int = 64
    value_hidden: int = 256
    partition: str = "contiguous"

    def __post_init__(self):
        if self.num_subagents < 1:
            raise ContractError(f"num_subagents must be >= 1, got {self.num_subagents}")
        if self.partition != "contiguous":
            raise ContractError(f"unknown partition rule {self.partition!r}")


def feature_partition(num_features: int, num_subagents: int) -> list[np.ndarray]:
    """Contiguous blocks of ceil(N/n) columns; the last block may be smaller."""
    if num_subagents < 1:
        raise ContractError("num_subagents must be >= 1")
    size = math.ceil(num_features / num_subagents)
    blocks = [np.arange(i * size, min((i + 1) * size, num_features)) for i in range(num_subagents)]
    empty = [i for i, b in enumerate(blocks) if len(b) == 0]
    if empty:
        raise ContractError(
            f"{num_subagents} subagents over {num_features} features in blocks of {size} leaves "
            f"subagent(s) {empty} with no features")
    return blocks


def slice_features(obs: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Feature columns of one observation or a batch; features are the last axis."""
    return np.asarray(obs)[..., cols]


class AttentionAggregator(Module):
    """Scores the environment encoding and each subagent action, softmaxes the
    scores and mixes common-dimension encodings of the inputs."""

    def __init__(self, env_dim: int, action_dim: int, enc_dim: int, rng: np.random.Generator,
                 zero_scores: bool = False):
        super().__init__()
        self.env_dim, self.action_dim, self.enc_dim = env_dim, action_dim, enc_dim
        self.f_env = Linear(env_dim, 1, rng, zero=zero_scores)
        self.f_sub = Linear(action_dim, 1, rng, zero=zero_scores)
        self.g_env = Linear(env_dim, enc_dim, rng)
        self.g_sub = Linear(action_dim, enc_dim, rng)

    def __call__(self, e, actions) -> tuple[Tensor, Tensor]:
        e, actions = nx.as_tensor(e), nx.as_tensor(actions)
        if e.ndim != 2 or e.shape[1] != self.env_dim:
            raise ContractError(f"environment encoding has shape {e.shape}, expected (batch, {self.env_dim})")
        if actions.ndim != 3 or actions.shape[2] != self.action_dim or actions.shape[0] != e.shape[0]:
            raise ContractError(
                f"subagent actions have shape {actions.shape}, expected ({e.shape[0]}, n, {self.action_dim})")
        B, n, _ = actions.shape
        flat = nx.reshape(actions, (B * n, self.action_dim))
        scores = nx.concat([self.f_env(e), nx.reshape(self.f_sub(flat), (B, n))], axis=1)
        weights = nx.softmax(scores, axis=-1)
        enc_env = nx.reshape(self.g_env(e), (B, 1, self.enc_dim))
        enc_sub = nx.reshape(self.g_sub(flat), (B, n, self.enc_dim))
        enc = nx.concat([enc_env, enc_sub], axis=1)
        d = nx.sum_(enc * nx.reshape(weights, (B, n + 1, 1)), axis=1)
        return d, weights


def attention_aggregate(e_t, subagent_actions, aggregator: AttentionAggregator) -> tuple[Tensor, Tensor]:
    """d_t and the attention weights for one observation (1-D e_t, list of
    action vectors) or a batch (2-D e_t, 3-D action stack)."""
    e = nx.as_tensor(e_t)
    acts = subagent_actions
    if isinstance(acts, (list, tuple)):
        if not acts:
            raise ContractError("attention_aggregate needs at least one subagent action")
        acts = np.stack([np.asarray(a, dtype=np.float64) for a in acts])
    acts = nx.as_tensor(acts)
    if e.ndim == 1:
        d, w = aggregator(nx.reshape(e, (1, e.shape[0])), nx.reshape(acts, (1,) + acts.shape))
        return nx.reshape(d, (d.shape[1],)), nx.reshape(w, (w.shape[1],))
    return aggregator(e, acts)


class SuperTrunk(Module):
    """Observation -> d_t: encodes the observation, queries the frozen
    subagents on their feature slices and aggregates."""

    def __init__(self, encoder: Module, env_dim: int, subagents: list[GaussianPolicy],
                 partitions: list[np.ndarray], action_dim: int, enc_dim: int, rng: np.random.Generator):
        super().__init__()
        if len(subagents) != len(partitions):
            raise ContractError("one feature block per subagent is required")
        self.encoder = encoder
        self.partitions = partitions
        self.subagents = subagents
        for i, sub in enumerate(subagents):
            sub.set_frozen(True)
            self.add_module(f"sub{i}", sub)
        self.aggregator = AttentionAggregator(env_dim, action_dim, enc_dim, rng)

    def subagent_actions(self, obs: np.ndarray) -> np.ndarray:
        return np.stack([sub.batch_stats(slice_features(obs, cols))[0]
                         for sub, cols in zip(self.subagents, self.partitions)], axis=1)

    def __call__(self, obs, training: bool = False) -> Tensor:
        raw = obs.data if isinstance(obs, Tensor) else np.asarray(obs, dtype=np.float64)
        e = self.encoder(raw, training)
        e = nx.reshape(e, (e.shape[0], -1))
        d, _ = self.aggregator(e, self.subagent_actions(raw))
        return d


@dataclass
class CMAPPOResult:
    superagent: GaussianPolicy
    subagents: list[GaussianPolicy]
    partitions: list[np.ndarray]
    sub_histories: list[TrainHistory]
    super_history: TrainHistory

    @property
    def status(self) -> str:
        hists = self.sub_histories + [self.super_history]
        return "ok" if all(h.status == "ok" for h in hists) else "diverged"


def _obs_layout(env) -> tuple[int, int]:
    """(number of features, flattened size of one feature column)."""
    shape = tuple(env.obs_shape)
    return shape[-1], int(np.prod(shape[:-1])) if len(shape) > 1 else 1


def make_subagents(env, config: CMAPPOConfig, rng: np.random.Generator) -> tuple[list, list]:
    n_feat, per_col = _obs_layout(env)
    parts = feature_partition(n_feat, config.num_subagents)
    windowed = len(env.obs_shape) > 1
    subs = [mlp_policy(per_col * len(cols), env.action_dim, rng, config.hidden, critic=True,
                       critic_hidden=config.hidden, flatten=windowed) for cols in parts]
    return subs, parts


def build_superagent(env, backbone, subagents, partitions, config: CMAPPOConfig,
                     rng: np.random.Generator) -> GaussianPolicy:
    """Latent-paradigm superagent over d_t. e_t is the backbone latent when a
    backbone is given, otherwise the flattened raw observation."""
    if backbone is not None:
        encoder: Module = BackboneLatent(backbone)
        env_dim = backbone.config.model_dim
    else:
        encoder = Identity()
        env_dim = int(np.prod(env.obs_shape))
    trunk = SuperTrunk(encoder, env_dim, subagents, partitions, env.action_dim, config.enc_dim, rng)
    head = Linear(config.enc_dim, env.action_dim, rng)
    critic = ValueNet(config.enc_dim, rng, config.value_hidden)
    return GaussianPolicy(trunk, head, env.action_dim, critic)


def cmappo_train(env, backbone, config: CMAPPOConfig, seed: int = 0,
                 subagents: list[GaussianPolicy] | None = None, superagent: GaussianPolicy | None = None,
                 train_subagents: bool | None = None, callback=None) -> CMAPPOResult:
    """Phase 1 trains each subagent on its feature block, phase 2 the
    superagent. Given ``subagents`` are kept as they are unless
    ``train_subagents`` is True. Buffers are tagged ``subagent<i>`` and
    ``superagent``."""
    ss = np.random.SeedSequence(seed)
    init_seed, *run_seeds = ss.spawn(config.num_subagents + 2)
    rng = np.random.default_rng(init_seed)
    n_feat, _ = _obs_layout(env)
    parts = feature_partition(n_feat, config.num_subagents)
    if subagents is None:
        subs, _ = make_subagents(env, config, rng)
        train_subagents = True if train_subagents is None else train_subagents
    else:
        if len(subagents) != len(parts):
            raise ContractError(f"{len(subagents)} subagents given, config asks for {len(parts)}")
        subs = list(subagents)
    sub_hist = []
    if train_subagents:
        for i, (sub, cols) in enumerate(zip(subs, parts)):
            sub.set_frozen(False)
            h = train_ppo(env, sub, config.sub_ppo, seed=run_seeds[i], tag=f"subagent{i}",
                          obs_fn=lambda o, c=cols: slice_features(o, c))
            sub.set_frozen(True)
            sub_hist.append(h)
    if superagent is None:
        superagent = build_superagent(env, backbone, subs, parts, config, rng)
    super_hist = train_ppo(env, superagent, config.super_ppo, seed=run_seeds[-1], tag="superagent",
                           callback=callback)
    return CMAPPOResult(superagent, subs, parts, sub_hist, super_hist)
