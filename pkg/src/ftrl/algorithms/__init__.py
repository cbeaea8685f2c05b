from .cmappo import (
    AttentionAggregator,
    CMAPPOConfig,
    CMAPPOResult,
    SuperTrunk,
    attention_aggregate,
    build_superagent,
    cmappo_train,
    feature_partition,
    make_subagents,
    slice_features,
)
from .grpo import (
    GRPOConfig,
    GroupBatch,
    collect_episode_groups,
    collect_forecast_groups,
    grpo_group_advantages,
    grpo_update,
    train_grpo,
)
from .policy import LOG_STD_MAX, LOG_STD_MIN, BackboneLatent, Flatten, GaussianPolicy, Identity, ValueNet, gaussian_kl, mlp_policy
from .ppo import (
    PPOConfig,
    RolloutBuffer,
    TrainHistory,
    collect_rollout,
    compute_gae,
    gae,
    normalize,
    ppo_surrogate,
    ppo_update,
    train_ppo,
)
from .stats import write_stats_csv

__all__ = [
    "AttentionAggregator", "BackboneLatent", "CMAPPOConfig", "CMAPPOResult", "Flatten", "GRPOConfig",
    "GaussianPolicy", "GroupBatch", "Identity", "LOG_STD_MAX", "LOG_STD_MIN", "PPOConfig", "RolloutBuffer",
    "SuperTrunk", "TrainHistory", "ValueNet", "attention_aggregate", "build_superagent", "cmappo_train",
    "collect_episode_groups", "collect_forecast_groups", "collect_rollout", "compute_gae", "feature_partition",
    "gae", "gaussian_kl", "grpo_group_advantages", "grpo_update", "make_subagents", "mlp_policy", "normalize",
    "ppo_surrogate", "ppo_update", "slice_features", "train_grpo", "train_ppo", "write_stats_csv",
]
