"""RL fine-tuning of a pre-trained backbone.

Two ways of wiring the backbone into a policy:

* actor: the backbone's own forecast is the Gaussian policy mean, and a
  separate critic reads the (detached) latent;
* latent: a new actor head and critic read the latent, and policy and value
  gradients both flow back into the encoder.

The CMAPPO superagent always uses the latent wiring over its aggregated
input. Training starts with a warm-up during which the whole encoder is
frozen; afterwards the configured fraction of input-side layers stays
frozen for the rest of the run.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Any

import numpy as np

from .algorithms import (
    BackboneLatent,
    CMAPPOConfig,
    GaussianPolicy,
    GRPOConfig,
    PPOConfig,
    ValueNet,
    build_superagent,
    cmappo_train,
    make_subagents,
    train_grpo,
    train_ppo,
)
from .backbone import Backbone
from .envs import ForecastEnv
from .numerics import Adam, ContractError, Linear

ALGORITHMS = ("ppo", "cmappo", "grpo")
PRETRAIN_LR = 1e-3


class Paradigm(str, enum.Enum):
    LATENT = "latent"
    ACTOR = "actor"


@dataclass
class FinetuneConfig:
    algorithm: str = "grpo"
    paradigm: str = "actor"
    frozen_fraction: float = 0.5
    total_timesteps: int = 20_000
    warmup_steps: int | None = None      # None: 10% of total_timesteps
    seed: int = 0
    lr: float | None = None              # None: pre-training lr / 10
    episode_length: int = 128
    eval_every: int = 2048
    checkpoint: str = "best"             # "best" or "last"
    critic_hidden: int = 256
    zero_head: bool = False              # latent paradigm: zero-initialized actor head
    log_std_init: float = 0.0
    ppo: PPOConfig = field(default_factory=lambda: PPOConfig(num_steps=512, minibatch_size=64, epochs=4))
    grpo: GRPOConfig = field(default_factory=GRPOConfig)
    cmappo: CMAPPOConfig = field(default_factory=lambda: CMAPPOConfig(
        num_subagents=4, sub_ppo=PPOConfig(total_timesteps=2048, num_steps=512, epochs=4),
        super_ppo=PPOConfig(num_steps=512, epochs=4)))

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        Paradigm(self.paradigm)
        if not 0.0 <= self.frozen_fraction <= 1.0:
            raise ContractError(f"frozen_fraction {self.frozen_fraction} outside [0, 1]")
        if self.total_timesteps < 0:
            raise ContractError("total_timesteps must be >= 0")
        if self.warmup_steps is not None and not 0 <= self.warmup_steps <= self.total_timesteps:
            raise ContractError(f"warmup_steps {self.warmup_steps} must lie in [0, total_timesteps]")
        if self.checkpoint not in ("best", "last"):
            raise ContractError("checkpoint must be 'best' or 'last'")
        if self.eval_every < 1:
            raise ContractError("eval_every must be >= 1")

    @property
    def warmup(self) -> int:
        return int(0.1 * self.total_timesteps) if self.warmup_steps is None else self.warmup_steps

    @property
    def learning_rate(self) -> float:
        return PRETRAIN_LR / 10 if self.lr is None else self.lr

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class EvalReport:
    mse: float
    mae: float
    split: str
    count: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def evaluate(model, dataset, split: str | None = "test") -> EvalReport:
    """MSE and MAE of evaluation-mode forecasts over one split.

    ``model`` is anything with ``predict(states)``: a Backbone or an Agent.
    With ``split=None`` (or an untagged dataset) every window is used.
    """
    if split is not None and dataset.tags is not None:
        part = dataset.subset(split)
    else:
        part, split = dataset, split or "all"
    if len(part) == 0:
        raise ValueError(f"evaluate: split {split!r} is empty")
    err = model.predict(part.states) - part.targets
    return EvalReport(float(np.mean(err * err)), float(np.mean(np.abs(err))), split, len(part))


@dataclass
class Agent:
    backbone: Backbone
    policy: GaussianPolicy
    paradigm: Paradigm
    algorithm: str
    subagents: list[GaussianPolicy] = field(default_factory=list)

    def predict(self, states: np.ndarray) -> np.ndarray:
        return self.policy.predict(states)

    def state_arrays(self) -> list[np.ndarray]:
        return self.policy.state_arrays()

    def load_arrays(self, arrays: list[np.ndarray]) -> None:
        self.policy.load_arrays(arrays)


def attach(backbone: Backbone, paradigm: Paradigm | str, config: FinetuneConfig,
           action_dim: int | None = None) -> Agent:
    """Wrap ``backbone`` into a Gaussian policy for ``config.algorithm``."""
    paradigm = Paradigm(paradigm)
    c = backbone.config
    action_dim = c.horizon if action_dim is None else action_dim
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    latent = BackboneLatent(backbone)
    critic_needed = config.algorithm in ("ppo", "cmappo")
    if config.algorithm == "cmappo":
        if paradigm is not Paradigm.LATENT:
            raise ContractError(
                "the CMAPPO superagent reads the aggregated subagent input, which does not match the "
                "backbone's encoder input, so it must use the latent paradigm")
        shape = SimpleNamespace(obs_shape=(c.context_length, c.num_features), action_dim=action_dim)
        subs, parts = make_subagents(shape, config.cmappo, rng)
        sup = build_superagent(shape, backbone, subs, parts, config.cmappo, rng)
        sup.log_std.data[:] = config.log_std_init
        return Agent(backbone, sup, paradigm, config.algorithm, subs)
    if paradigm is Paradigm.ACTOR:
        if c.horizon != action_dim:
            raise ContractError(
                f"actor paradigm needs backbone horizon P={c.horizon} to equal action dimension {action_dim}")
        critic = ValueNet(c.model_dim, rng, config.critic_hidden) if critic_needed else None
        policy = GaussianPolicy(latent, backbone.head, action_dim, critic, detach_critic=True,
                                log_std_init=config.log_std_init)
    else:
        head = Linear(c.model_dim, action_dim, rng, zero=config.zero_head)
        critic = ValueNet(c.model_dim, rng, config.critic_hidden) if critic_needed else None
        policy = GaussianPolicy(latent, head, action_dim, critic, log_std_init=config.log_std_init)
    return Agent(backbone, policy, paradigm, config.algorithm)


SNAPSHOT_COLUMNS = ("timestep", "mean_reward", "val_mse", "val_mae")


@dataclass
class FinetuneResult:
    backbone: Backbone
    agent: Agent
    rows: list[dict] = field(default_factory=list)          # one per update
    snapshots: list[dict] = field(default_factory=list)     # periodic validation
    best_step: int = 0
    status: str = "ok"

    @property
    def reward_curve(self) -> list[float]:
        return [r["mean_reward"] for r in self.rows]


def _write_snapshots(path: Path, snapshots: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(SNAPSHOT_COLUMNS), extrasaction="ignore")
        w.writeheader()
        w.writerows(snapshots)


def finetune(agent: Agent, env: ForecastEnv, config: FinetuneConfig, val_dataset=None,
             log_path: str | Path | None = None) -> FinetuneResult:
    """Run the configured algorithm on ``env`` and return the tuned backbone.

    Validation snapshots (MSE/MAE of the agent's mean forecast) are taken at
    step 0, every ``eval_every`` timesteps and at the end. With
    ``checkpoint='best'`` the parameters of the best snapshot are restored.
    A diverged run is stopped, restored to its best snapshot and flagged.
    """
    backbone = agent.backbone
    result = FinetuneResult(backbone, agent)
    if config.total_timesteps == 0:
        return result
    val = val_dataset
    best = {"mse": np.inf, "arrays": None, "step": 0}

    def snapshot(step: int, mean_reward: float) -> None:
        if val is None:
            return
        rep = evaluate(agent, val, "validation" if val.tags is not None else None)
        result.snapshots.append({"timestep": step, "mean_reward": mean_reward,
                                 "val_mse": rep.mse, "val_mae": rep.mae})
        if rep.mse < best["mse"]:
            best.update(mse=rep.mse, arrays=agent.state_arrays(), step=step)

    warmup = config.warmup
    if warmup > 0:
        backbone.freeze_encoder()
    else:
        backbone.set_frozen_fraction(config.frozen_fraction)
    state = {"warm": warmup > 0, "next_eval": config.eval_every}
    snapshot(0, float("nan"))

    def callback(step: int, row: dict) -> bool:
        result.rows.append(row)
        if state["warm"] and step >= warmup:
            backbone.set_frozen_fraction(config.frozen_fraction)
            state["warm"] = False
        if step >= state["next_eval"]:
            snapshot(step, row.get("mean_reward", float("nan")))
            while state["next_eval"] <= step:
                state["next_eval"] += config.eval_every
        return False

    opt = Adam(config.learning_rate)
    seed = np.random.SeedSequence([config.seed, 2])
    run_seed = int(seed.generate_state(1)[0])
    if config.algorithm == "ppo":
        ppo = PPOConfig(**{**asdict(config.ppo), "total_timesteps": config.total_timesteps,
                           "lr": config.learning_rate})
        hist = train_ppo(env, agent.policy, ppo, seed=run_seed, callback=callback, optimizer=opt)
        status = hist.status
    elif config.algorithm == "grpo":
        grpo = GRPOConfig(**{**asdict(config.grpo), "total_timesteps": config.total_timesteps,
                             "lr": config.learning_rate})
        hist = train_grpo(env, agent.policy, grpo, seed=run_seed, callback=callback, optimizer=opt)
        status = hist.status
    else:
        cm = config.cmappo
        sup = PPOConfig(**{**asdict(cm.super_ppo), "total_timesteps": config.total_timesteps,
                           "lr": config.learning_rate})
        cm_cfg = CMAPPOConfig(cm.num_subagents, cm.sub_ppo, sup, cm.enc_dim, cm.hidden, cm.value_hidden,
                              cm.partition)
        res = cmappo_train(env, backbone, cm_cfg, seed=run_seed, subagents=agent.subagents,
                           superagent=agent.policy, train_subagents=True, callback=callback)
        status = res.status
    if state["warm"]:
        backbone.set_frozen_fraction(config.frozen_fraction)
    last_step = result.rows[-1]["step"] if result.rows else 0
    if not result.snapshots or result.snapshots[-1]["timestep"] != last_step:
        snapshot(last_step, result.rows[-1]["mean_reward"] if result.rows else float("nan"))
    if status != "ok":
        result.status = "diverged"
    if best["arrays"] is not None and (config.checkpoint == "best" or status != "ok"):
        agent.load_arrays(best["arrays"])
        result.best_step = best["step"]
    else:
        result.best_step = last_step
    if log_path is not None:
        _write_snapshots(Path(log_path), result.snapshots)
    return result


def forecast_env(dataset, config: FinetuneConfig) -> ForecastEnv:
    """Shuffled training environment over the train split of ``dataset``."""
    train = dataset.subset("train") if dataset.tags is not None else dataset
    return ForecastEnv(train, episode_length=config.episode_length, shuffle=True)
