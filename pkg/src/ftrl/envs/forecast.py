from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..numerics import ContractError


# 2 * exp(-MSE) - 1 rounds to exactly -1 once MSE exceeds ~37; the floor
# keeps the value inside (-1, 1] for every input
REWARD_FLOOR = float(np.nextafter(-1.0, 0.0))


def forecast_reward(action, target) -> float:
    """2 * exp(-MSE) - 1: equals 1 for a perfect forecast, tends to -1 from above."""
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if a.shape != y.shape:
        raise ContractError(f"forecast_reward: action length {a.size} != target length {y.size}")
    mse = float(np.mean((a - y) ** 2))
    return max(2.0 * np.exp(-mse) - 1.0, REWARD_FLOOR)


def batch_forecast_reward(actions: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rewards for a stack of candidate forecasts against one target."""
    actions = np.asarray(actions, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if actions.shape[-1] != target.shape[-1]:
        raise ContractError(f"forecast_reward: action length {actions.shape[-1]} != target length {target.shape[-1]}")
    mse = np.mean((actions - target) ** 2, axis=-1)
    return np.maximum(2.0 * np.exp(-mse) - 1.0, REWARD_FLOOR)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


class ForecastEnv:
    """Each step shows one window, takes a P-step forecast, reveals the truth.

    Episodes last ``episode_length`` windows (or until the data runs out).
    In shuffled mode the window order is a permutation drawn from the reset
    seed; in sequential mode windows are visited in time order from
    ``start``. ``penalty`` is an optional extra cost psi(action) subtracted
    from the reward.
    """

    def __init__(self, dataset, episode_length: int = 128, shuffle: bool = True,
                 penalty: Callable[[np.ndarray], float] | None = None):
        if len(dataset) == 0:
            raise ValueError("ForecastEnv needs a non-empty dataset")
        if episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        self.states = np.asarray(dataset.states, dtype=np.float64)
        self.targets = np.asarray(dataset.targets, dtype=np.float64)
        self.episode_length = episode_length
        self.shuffle = shuffle
        self.penalty = penalty
        self._order: np.ndarray | None = None
        self._pos = 0
        self._steps = 0
        self._limit = 0
        self.done = True

    @property
    def obs_shape(self) -> tuple[int, int]:
        return self.states.shape[1:]

    @property
    def action_dim(self) -> int:
        return self.targets.shape[1]

    def __len__(self) -> int:
        return len(self.states)

    def reset(self, seed: int | None = None, start: int = 0) -> np.ndarray:
        n = len(self.states)
        if self.shuffle:
            self._order = np.random.default_rng(seed).permutation(n)
            self._pos = 0
        else:
            if not 0 <= start < n:
                raise ContractError(f"start {start} outside [0, {n})")
            self._order = np.arange(n)
            self._pos = start
        self._steps = 0
        self._limit = min(self.episode_length, n - self._pos)
        self.done = False
        return self.states[self._order[self._pos]]

    @property
    def cursor(self) -> int:
        if self._order is None:
            raise ContractError("environment has not been reset")
        return int(self._order[min(self._pos, len(self._order) - 1)])

    def observation(self) -> np.ndarray:
        return self.states[self.cursor]

    def current_target(self) -> np.ndarray:
        return self.targets[self.cursor]

    def score(self, actions: np.ndarray) -> np.ndarray:
        """Rewards of candidate forecasts for the current window, without advancing."""
        if self.done:
            raise ContractError("score() called on a finished episode; reset first")
        r = batch_forecast_reward(actions, self.current_target())
        if self.penalty is not None:
            r = r - np.array([self.penalty(a) for a in np.atleast_2d(actions)]).reshape(r.shape)
        return r

    def step(self, action) -> StepResult:
        if self.done:
            raise ContractError("step() called after episode end; reset first")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.action_dim,):
            raise ContractError(f"action has shape {action.shape}, expected ({self.action_dim},)")
        idx = self.cursor
        y = self.targets[idx]
        reward = forecast_reward(action, y)
        if self.penalty is not None:
            reward -= float(self.penalty(action))
        self._pos += 1
        self._steps += 1
        self.done = self._steps >= self._limit
        obs = self.states[self._order[self._pos]] if not self.done else self.states[idx]
        return StepResult(obs, float(reward), self.done, {"target": y, "index": idx})

    forecast_step = step
