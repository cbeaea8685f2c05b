"""Pre-train transformer forecasters, then fine-tune them with PPO, CMAPPO or GRPO."""

__version__ = "0.1.0"
