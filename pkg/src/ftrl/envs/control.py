"""Small continuous-control tasks with forward/healthy/control reward terms.

line-racer: a point mass on a line pushed by a bounded force.
    R = w_f * F - w_ctrl * C
stick-balance: a pole on a cart.
    R = w_f * F + w_h * H - w_ctrl * C

F is the forward displacement during the step, C the squared action norm and
H is 1 while the pole angle stays inside the healthy range. Both use
semi-implicit Euler integration (velocity first, then position) with dt=0.05.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..numerics import ContractError
from .forecast import StepResult

VARIANTS = ("line-racer", "stick-balance")


@dataclass(frozen=True)
class ControlConfig:
    variant: str = "stick-balance"
    w_f: float = 1.0
    w_h: float = 1.0
    w_ctrl: float = 0.1
    max_steps: int = 200
    dt: float = 0.05
    healthy_angle: float = 0.2
    force_scale: float = 20.0   # line-racer acceleration per unit action
    drag: float = 1.0           # line-racer velocity damping
    push: float = 10.0          # stick-balance cart force per unit action
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown control variant {self.variant!r}; choose from {VARIANTS}")
        if self.max_steps < 1 or self.dt <= 0:
            raise ValueError("max_steps must be >= 1 and dt > 0")


def default_config(variant: str, **overrides) -> ControlConfig:
    if variant == "line-racer":
        base = dict(variant=variant, w_f=1.0, w_h=0.0, w_ctrl=0.1)
    elif variant == "stick-balance":
        base = dict(variant=variant, w_f=1.0, w_h=1.0, w_ctrl=0.001)
    else:
        raise ValueError(f"unknown control variant {variant!r}; choose from {VARIANTS}")
    base.update(overrides)
    return ControlConfig(**base)


class ControlEnv:
    def __init__(self, config: ControlConfig | str = "stick-balance"):
        self.config = default_config(config) if isinstance(config, str) else config
        n = 2 if self.config.variant == "line-racer" else 4
        self.state = np.zeros(n)
        self.steps = 0
        self.done = True

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def obs_shape(self) -> tuple[int]:
        return self.state.shape

    @property
    def action_dim(self) -> int:
        return 1

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if self.variant == "line-racer":
            self.state = np.zeros(2)
        else:
            self.state = rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        self.done = False
        return self.state.copy()

    def set_state(self, state) -> None:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != self.state.shape:
            raise ContractError(f"state has shape {state.shape}, expected {self.state.shape}")
        self.state = state.copy()
        self.done = False
        if self.variant == "stick-balance" and not self.healthy():
            self.done = True

    def observation(self) -> np.ndarray:
        return self.state.copy()

    def healthy(self) -> bool:
        return abs(self.state[2]) < self.config.healthy_angle

    def clone(self) -> "ControlEnv":
        return copy.deepcopy(self)

    def step(self, action) -> StepResult:
        if self.done:
            raise ContractError("step() called after episode end; reset first")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
        if a.shape != (self.action_dim,):
            raise ContractError(f"action has shape {a.shape}, expected ({self.action_dim},)")
        c = self.config
        x_before = self.state[0]
        if self.variant == "line-racer":
            x, v = self.state
            v = v + c.dt * (c.force_scale * a[0] - c.drag * v)
            x = x + c.dt * v
            self.state = np.array([x, v])
        else:
            self._cartpole(a[0])
        F = self.state[0] - x_before
        C = float(a @ a)
        self.steps += 1
        reward = c.w_f * F - c.w_ctrl * C
        if self.variant == "stick-balance":
            healthy = self.healthy()
            reward += c.w_h * (1.0 if healthy else 0.0)
            self.done = not healthy
        self.done = self.done or self.steps >= c.max_steps
        return StepResult(self.state.copy(), float(reward), self.done,
                          {"forward": F, "ctrl": C, "steps": self.steps})

    def _cartpole(self, a: float) -> None:
        c = self.config
        x, xd, th, thd = self.state
        force = c.push * a
        total = c.cart_mass + c.pole_mass
        pml = c.pole_mass * c.pole_half_length
        sin, cos = np.sin(th), np.cos(th)
        tmp = (force + pml * thd ** 2 * sin) / total
        thdd = (c.gravity * sin - cos * tmp) / (c.pole_half_length * (4.0 / 3.0 - c.pole_mass * cos ** 2 / total))
        xdd = tmp - pml * thdd * cos / total
        xd = xd + c.dt * xdd
        thd = thd + c.dt * thdd
        x = x + c.dt * xd
        th = th + c.dt * thd
        self.state = np.array([x, xd, th, thd])

    control_step = step
