from __future__ import annotations

import math

import numpy as np

from .. import numerics as nx
from ..numerics import MLP, ContractError, Module, Tensor

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_ENTROPY_CONST = 0.5 * math.log(2.0 * math.pi * math.e)


class Identity(Module):
    def __call__(self, x, training: bool = False) -> Tensor:
        return nx.as_tensor(x)


class Flatten(Module):
    """Flattens each observation; used for window observations fed to an MLP."""

    def __call__(self, x, training: bool = False) -> Tensor:
        t = nx.as_tensor(x)
        return nx.reshape(t, (t.shape[0], -1))


class BackboneLatent(Module):
    """Trunk returning the backbone's pooled latent."""

    def __init__(self, backbone):
        super().__init__()
        self.backbone = backbone

    @property
    def out_dim(self) -> int:
        return self.backbone.config.model_dim

    def __call__(self, x, training: bool = False) -> Tensor:
        return self.backbone.forward_latent(x)


class ValueNet(Module):
    """Two tanh hidden layers (256 units by default) and a scalar output."""

    def __init__(self, in_dim: int, rng: np.random.Generator, hidden: int = 256):
        super().__init__()
        self.net = MLP([in_dim, hidden, hidden, 1], rng)

    def __call__(self, x) -> Tensor:
        out = self.net(x)
        return nx.reshape(out, (out.shape[0],))


class GaussianPolicy(Module):
    """Diagonal Gaussian policy with a state-independent learnable log_std.

    ``trunk`` maps a batch of observations to features; ``mean_head`` maps
    features to action means; ``critic`` (optional) maps features to state
    values. With ``detach_critic`` the critic sees the features as
    constants, so value-loss gradients never reach the trunk.
    """

    def __init__(self, trunk: Module, mean_head, action_dim: int, critic: Module | None = None,
                 detach_critic: bool = False, log_std_init: float = 0.0):
        super().__init__()
        self.trunk = trunk
        self.mean_head = mean_head
        self.critic = critic
        self.action_dim = action_dim
        self.detach_critic = detach_critic
        self.log_std = nx.param(np.full(action_dim, float(log_std_init)))

    # ------------------------------------------------------------- graph pieces

    def forward(self, obs, training: bool = False) -> tuple[Tensor, Tensor | None]:
        feats = self.trunk(obs, training)
        mean = self.mean_head(feats)
        if mean.ndim != 2 or mean.shape[1] != self.action_dim:
            raise ContractError(f"mean head produced shape {mean.shape}, expected (batch, {self.action_dim})")
        value = None
        if self.critic is not None:
            value = self.critic(feats.detach() if self.detach_critic else feats)
        return mean, value

    def log_prob_from_mean(self, mean: Tensor, actions) -> Tensor:
        lp = nx.gaussian_log_prob(actions, mean, self.log_std)
        return nx.sum_(lp, axis=-1)

    def log_prob(self, obs, actions) -> Tensor:
        mean, _ = self.forward(obs)
        return self.log_prob_from_mean(mean, actions)

    def entropy(self) -> Tensor:
        return nx.sum_(self.log_std + _ENTROPY_CONST)

    def clamp_log_std(self) -> None:
        self.log_std.data = np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX)

    # ------------------------------------------------------------- numpy surface

    def batch_stats(self, obs) -> tuple[np.ndarray, np.ndarray | None]:
        """Means and values for a batch of observations, without a graph."""
        with nx.no_grad():
            mean, value = self.forward(np.asarray(obs, dtype=np.float64))
        return mean.data, (value.data if value is not None else None)

    def sample(self, mean: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw actions around ``mean`` (batch, A); returns actions and log-probs."""
        std = np.exp(self.log_std.data)
        actions = mean + std * rng.standard_normal(mean.shape)
        with nx.no_grad():
            lp = self.log_prob_from_mean(Tensor(mean), actions).data
        return actions, lp

    def act(self, obs, rng: np.random.Generator | None = None, deterministic: bool = False):
        """One action for one observation: (action, log_prob, value)."""
        mean, value = self.batch_stats(np.asarray(obs, dtype=np.float64)[None])
        v = float(value[0]) if value is not None else 0.0
        if deterministic or rng is None:
            with nx.no_grad():
                lp = self.log_prob_from_mean(Tensor(mean), mean).data
            return mean[0], float(lp[0]), v
        a, lp = self.sample(mean, rng)
        return a[0], float(lp[0]), v

    def predict(self, states: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Evaluation-mode action means for a stack of observations."""
        states = np.asarray(states, dtype=np.float64)
        out = [self.batch_stats(states[i:i + batch_size])[0] for i in range(0, len(states), batch_size)]
        if not out:
            return np.zeros((0, self.action_dim))
        return np.concatenate(out, axis=0)


def mlp_policy(obs_dim: int, action_dim: int, rng: np.random.Generator, hidden: int = 64,
               critic: bool = True, critic_hidden: int = 64, flatten: bool = False,
               log_std_init: float = 0.0) -> GaussianPolicy:
    """Separate actor and critic MLPs over raw observations."""
    trunk = Flatten() if flatten else Identity()
    head = MLP([obs_dim, hidden, hidden, action_dim], rng)
    value = ValueNet(obs_dim, rng, critic_hidden) if critic else None
    return GaussianPolicy(trunk, head, action_dim, value, log_std_init=log_std_init)


def gaussian_kl(mean_p, log_std_p, mean_q, log_std_q) -> Tensor:
    """KL(p || q) between diagonal Gaussians, summed over the last axis."""
    mean_p, log_std_p = nx.as_tensor(mean_p), nx.as_tensor(log_std_p)
    mean_q, log_std_q = nx.as_tensor(mean_q), nx.as_tensor(log_std_q)
    var_ratio = nx.exp((log_std_p - log_std_q) * 2.0)
    diff = (mean_p - mean_q) * nx.exp(-log_std_q)
    terms = (log_std_q - log_std_p) + (var_ratio + diff * diff) * 0.5 - 0.5
    return nx.sum_(terms, axis=-1)


__all__ = [
    "BackboneLatent", "Flatten", "GaussianPolicy", "Identity", "LOG_STD_MAX", "LOG_STD_MIN",
    "ValueNet", "gaussian_kl", "mlp_policy",
]
