from .control import VARIANTS, ControlConfig, ControlEnv, default_config
from .forecast import ForecastEnv, StepResult, batch_forecast_reward, forecast_reward

__all__ = [
    "ControlConfig", "ControlEnv", "ForecastEnv", "StepResult", "VARIANTS", "batch_forecast_reward",
    "default_config", "forecast_reward",
]
